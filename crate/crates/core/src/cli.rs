//! Command-line front end: configuration, experiment orchestration and
//! report emission.
//!
//! Every command writes `report.json` (embedding the effective configuration
//! and the crate version) into the output directory, plus CSV data where it
//! applies. Failures write `error.json` instead.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::functionals::evaluate;
use crate::grid::{Grid, Scheme};
use crate::integrator::{self, cfl_dt, evolve_with, EvolveOptions, Reference};
use crate::models::{self, ModelParams, State};
use crate::report::to_json_string;
use crate::solutions::ExactSolution;
use crate::stability::{self, ExperimentConfig, Verdict};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "CASIMIR_GAS_THREADS";

/// Residual threshold for steady states.
const EQUILIBRIUM_TOL: f64 = 1e-10;
const SOLUTION_RESIDUAL_TOL: f64 = 1e-12;
const ORACLE_RTOL: f64 = 1e-10;
const MANIFOLD_CHECK_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Chaplygin,
    BornInfeld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    Exact,
    Equilibrium,
    Manifold,
    OffManifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub lambda: f64,
    pub a: f64,
    pub c: f64,
    pub n: usize,
    pub scheme: Scheme,
    /// Explicit time step; `None` uses `cfl_fraction` of the CFL estimate.
    pub dt: Option<f64>,
    pub cfl_fraction: f64,
    pub t_final: f64,
    pub seed: u64,
    pub amplitudes: Vec<f64>,
    pub samples: usize,
    pub sample_amplitude: f64,
    pub snapshot_every: usize,
    pub initial: InitialData,
    pub perturbation: f64,
    pub off_manifold: bool,
    /// Exploratory manifold point `p ≡ at_p` for `first-variation`.
    pub at_p: Option<f64>,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Chaplygin,
            lambda: 0.5,
            a: 1.0,
            c: 1.0,
            n: 128,
            scheme: Scheme::Spectral,
            dt: None,
            cfl_fraction: 0.5,
            t_final: 10.0,
            seed: 42,
            amplitudes: vec![1e-3, 1e-2, 1e-1],
            samples: stability::DEFAULT_SAMPLES,
            sample_amplitude: stability::DEFAULT_SAMPLE_AMPLITUDE,
            snapshot_every: integrator::DEFAULT_SNAPSHOT_EVERY,
            initial: InitialData::Manifold,
            perturbation: 1e-2,
            off_manifold: false,
            at_p: None,
            out_dir: PathBuf::from("casimir-gas-out"),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

fn expect_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| config_error(key, format!("expected a number, got {v}")))
}

fn expect_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|u| u as usize).ok_or_else(|| config_error(key, format!("expected a non-negative integer, got {v}")))
}

fn expect_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| config_error(key, format!("expected a string, got {v}")))
}

fn parse_model(key: &str, s: &str) -> Result<ModelKind> {
    match s {
        "chaplygin" => Ok(ModelKind::Chaplygin),
        "born-infeld" => Ok(ModelKind::BornInfeld),
        _ => Err(config_error(key, format!("unknown model `{s}` (expected chaplygin or born-infeld)"))),
    }
}

fn parse_initial(key: &str, s: &str) -> Result<InitialData> {
    match s {
        "exact" => Ok(InitialData::Exact),
        "equilibrium" => Ok(InitialData::Equilibrium),
        "manifold" => Ok(InitialData::Manifold),
        "off-manifold" => Ok(InitialData::OffManifold),
        _ => Err(config_error(key, format!("unknown initial data `{s}`"))),
    }
}

fn parse_format(key: &str, s: &str) -> Result<Format> {
    match s {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        _ => Err(config_error(key, format!("unknown format `{s}` (expected json or csv)"))),
    }
}

impl RunConfig {
    /// Applies the keys of a JSON config object on top of `self`.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(config_error("<root>", "config file must hold a JSON object"));
        };
        self.apply_map(&map)
    }

    fn apply_map(&mut self, map: &Map<String, Value>) -> Result<()> {
        for (key, v) in map {
            let k = key.as_str();
            match k {
                "model" => self.model = parse_model(k, expect_str(k, v)?)?,
                "lambda" => self.lambda = expect_f64(k, v)?,
                "a" => self.a = expect_f64(k, v)?,
                "c" => self.c = expect_f64(k, v)?,
                "n" => self.n = expect_usize(k, v)?,
                "scheme" => {
                    self.scheme = expect_str(k, v)?.parse().map_err(|e: Error| config_error(k, e.to_string()))?
                }
                "dt" => self.dt = if v.is_null() { None } else { Some(expect_f64(k, v)?) },
                "cfl_fraction" => self.cfl_fraction = expect_f64(k, v)?,
                "t_final" => self.t_final = expect_f64(k, v)?,
                "seed" => {
                    self.seed =
                        v.as_u64().ok_or_else(|| config_error(k, format!("expected an unsigned integer, got {v}")))?
                }
                "amplitudes" => {
                    let items = v.as_array().ok_or_else(|| config_error(k, format!("expected an array, got {v}")))?;
                    self.amplitudes = items.iter().map(|x| expect_f64(k, x)).collect::<Result<_>>()?;
                }
                "samples" => self.samples = expect_usize(k, v)?,
                "sample_amplitude" => self.sample_amplitude = expect_f64(k, v)?,
                "snapshot_every" => self.snapshot_every = expect_usize(k, v)?,
                "initial" => self.initial = parse_initial(k, expect_str(k, v)?)?,
                "perturbation" => self.perturbation = expect_f64(k, v)?,
                "off_manifold" => {
                    self.off_manifold =
                        v.as_bool().ok_or_else(|| config_error(k, format!("expected a boolean, got {v}")))?
                }
                "at_p" => self.at_p = if v.is_null() { None } else { Some(expect_f64(k, v)?) },
                "out_dir" => self.out_dir = PathBuf::from(expect_str(k, v)?),
                "formats" => {
                    let items = v.as_array().ok_or_else(|| config_error(k, format!("expected an array, got {v}")))?;
                    self.formats = items.iter().map(|x| parse_format(k, expect_str(k, x)?)).collect::<Result<_>>()?;
                }
                _ => return Err(config_error(k, "unknown key")),
            }
        }
        Ok(())
    }

    /// Range checks with the offending key in the diagnostic.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_error(key, format!("must be positive and finite, got {v}")))
            }
        };
        let relative = |key: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_error(key, format!("must lie in [0, 1), got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("a", self.a)?;
        positive("c", self.c)?;
        Grid::new(self.n).map_err(|e| config_error("n", e.to_string()))?;
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        positive("cfl_fraction", self.cfl_fraction)?;
        if self.cfl_fraction > 1.0 {
            return Err(config_error("cfl_fraction", format!("must not exceed 1, got {}", self.cfl_fraction)));
        }
        positive("t_final", self.t_final)?;
        if self.amplitudes.is_empty() {
            return Err(config_error("amplitudes", "must not be empty"));
        }
        for &a in &self.amplitudes {
            relative("amplitudes", a)?;
        }
        if self.samples == 0 {
            return Err(config_error("samples", "must be at least 1"));
        }
        relative("sample_amplitude", self.sample_amplitude)?;
        if self.snapshot_every == 0 {
            return Err(config_error("snapshot_every", "must be at least 1"));
        }
        relative("perturbation", self.perturbation)?;
        if let Some(p) = self.at_p {
            positive("at_p", p)?;
        }
        if self.formats.is_empty() {
            return Err(config_error("formats", "must list at least one format"));
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        match self.model {
            ModelKind::Chaplygin => ModelParams::Chaplygin { lambda: self.lambda },
            ModelKind::BornInfeld => ModelParams::BornInfeld { a: self.a, c: self.c },
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n)
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            amplitudes: self.amplitudes.clone(),
            off_manifold: self.off_manifold,
            t_final: self.t_final,
            seed: self.seed,
            cfl_fraction: self.cfl_fraction,
            scheme: self.scheme,
            snapshot_every: self.snapshot_every,
            n_samples: self.samples,
            sample_amplitude: self.sample_amplitude,
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "casimir-gas",
    version,
    about = "Chaplygin gas and Born-Infeld simulations with energy-Casimir checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub c: Option<f64>,
    /// Grid points (even, at least 8).
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// spectral or central4
    #[arg(long, global = true)]
    pub scheme: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub cfl_fraction: Option<f64>,
    #[arg(long = "t-final", global = true, allow_hyphen_values = true)]
    pub t_final: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated relative perturbation amplitudes.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub amplitudes: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sample_amplitude: Option<f64>,
    #[arg(long, global = true)]
    pub snapshot_every: Option<usize>,
    /// exact, equilibrium, manifold or off-manifold
    #[arg(long, global = true)]
    pub initial: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub perturbation: Option<f64>,
    /// Also run off-manifold perturbations (reported separately).
    #[arg(long, global = true)]
    pub off_manifold: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub at_p: Option<f64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated output formats (json, csv).
    #[arg(long, global = true, value_delimiter = ',')]
    pub formats: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Evolve initial data and record monitors and field snapshots.
    Simulate,
    /// Residual of the named equilibrium and of random manifold states.
    CheckEquilibrium,
    /// First variation of H + C at the named equilibrium.
    FirstVariation,
    /// Sample the quadratic-form bounds and continuity constants.
    VerifyInequalities,
    /// Perturb the equilibrium and measure amplification.
    StabilitySweep,
    /// Residual and functional values of the closed-form profile.
    VerifySolution,
    /// Temporal and spatial convergence study.
    Convergence,
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            cfg.apply_json(&text)?;
        }
        if let Some(v) = &self.model {
            cfg.model = parse_model("model", v)?;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(lambda, a, c, n, cfl_fraction, t_final, seed, amplitudes, samples, sample_amplitude, snapshot_every);
        set!(perturbation, out_dir);
        if let Some(v) = &self.scheme {
            cfg.scheme = v.parse().map_err(|e: Error| config_error("scheme", e.to_string()))?;
        }
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        if self.at_p.is_some() {
            cfg.at_p = self.at_p;
        }
        if let Some(v) = &self.initial {
            cfg.initial = parse_initial("initial", v)?;
        }
        if let Some(v) = &self.formats {
            cfg.formats = v.iter().map(|s| parse_format("formats", s)).collect::<Result<_>>()?;
        }
        if self.off_manifold {
            cfg.off_manifold = true;
        }
        cfg.amplitudes.sort_by(f64::total_cmp);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Result of one command: pass/fail, the JSON payload, a text summary and
/// extra files to write.
pub struct Outcome {
    pub passed: bool,
    pub result: Value,
    pub summary: String,
    pub files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    passed: bool,
    result: &'a Value,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    tool: &'static str,
    version: &'static str,
    error: &'static str,
    key: Option<&'a str>,
    message: String,
}

/// Writes `error.json` describing `err` into `dir`.
pub fn write_error(dir: &Path, err: &Error) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let key = match err {
        Error::Config { key, .. } => Some(key.as_str()),
        _ => None,
    };
    let report =
        ErrorReport { tool: "casimir-gas", version: VERSION, error: err.kind(), key, message: err.to_string() };
    let path = dir.join("error.json");
    fs::write(&path, to_json_string(&report) + "\n")?;
    Ok(path)
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    // Round-trip through the fixed-digit formatter so the written report is
    // independent of serde_json's shortest-float printing.
    Ok(serde_json::from_str(&to_json_string(v))?)
}

/// Runs `command` and writes its artifacts into `cfg.out_dir`.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let outcome = match command {
        Command::Simulate => simulate(cfg)?,
        Command::CheckEquilibrium => check_equilibrium(cfg)?,
        Command::FirstVariation => first_variation(cfg)?,
        Command::VerifyInequalities => verify_inequalities(cfg)?,
        Command::StabilitySweep => stability_sweep(cfg)?,
        Command::VerifySolution => verify_solution(cfg)?,
        Command::Convergence => convergence(cfg)?,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    if cfg.wants(Format::Json) {
        let envelope = Envelope {
            tool: "casimir-gas",
            version: VERSION,
            command,
            config: cfg,
            passed: outcome.passed,
            result: &outcome.result,
        };
        fs::write(cfg.out_dir.join("report.json"), to_json_string(&envelope) + "\n")?;
    }
    if cfg.wants(Format::Csv) {
        for (name, body) in &outcome.files {
            fs::write(cfg.out_dir.join(name), body)?;
        }
    }
    Ok(outcome)
}

/// Parses arguments, runs the command in a pool sized by
/// `CASIMIR_GAS_THREADS`, and returns the process exit code: 0 when all
/// checks pass, 1 when a check fails, 2 on error (after writing
/// `error.json`).
pub fn run(cli: &Cli) -> Result<i32> {
    let fallback_dir = cli.out_dir.clone().unwrap_or_else(|| RunConfig::default().out_dir);
    let cfg = match cli.effective_config() {
        Ok(cfg) => cfg,
        Err(e) => {
            write_error(&fallback_dir, &e)?;
            eprintln!("error: {e}");
            return Ok(2);
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => t,
            _ => {
                let e = config_error(THREADS_ENV, format!("expected a positive integer, got `{v}`"));
                write_error(&cfg.out_dir, &e)?;
                eprintln!("error: {e}");
                return Ok(2);
            }
        },
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    match pool.install(|| execute(cli.command, &cfg)) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            Ok(if outcome.passed { 0 } else { 1 })
        }
        Err(e) => {
            write_error(&cfg.out_dir, &e)?;
            eprintln!("error: {e}");
            Ok(2)
        }
    }
}

fn initial_state(cfg: &RunConfig, m: &ModelParams, grid: &Grid) -> Result<State> {
    match cfg.initial {
        InitialData::Exact => Ok(ExactSolution::for_model(m)?.sample(0.0, grid)),
        InitialData::Equilibrium => models::named_equilibrium(m, grid),
        InitialData::Manifold => {
            let (pe, _) = models::equilibrium_values(m)?;
            stability::sample_manifold_state(cfg.seed, cfg.perturbation, m.kappa()?, pe, stability::DEFAULT_MODES, grid)
        }
        InitialData::OffManifold => {
            let center = models::equilibrium_values(m)?;
            stability::sample_off_manifold_state(cfg.seed, cfg.perturbation, center, stability::DEFAULT_MODES, grid)
        }
    }
}

#[derive(Serialize)]
struct SimulateResult {
    model: ModelParams,
    steps: usize,
    dt: f64,
    t_final: f64,
    hamiltonian_drift: f64,
    casimir_drift: f64,
    max_pointwise_deviation: f64,
    left_smooth_regime_at: Option<f64>,
    warnings: Vec<String>,
    initial: integrator::Monitor,
    last: integrator::Monitor,
    snapshots: usize,
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let s0 = initial_state(cfg, &m, &grid)?;
    let dt = cfg.dt.unwrap_or_else(|| cfg.cfl_fraction * cfl_dt(&s0, &m));
    let reference = match models::named_equilibrium(&m, &grid) {
        Ok(u_e) => {
            let rho_e = u_e.rho.values()[0];
            Some(Reference { form: stability::model_q_form(&m, &grid, rho_e, s0.rho.max().max(rho_e))?, state: u_e })
        }
        Err(_) => None,
    };
    let opts =
        EvolveOptions { scheme: cfg.scheme, snapshot_every: cfg.snapshot_every, reference, ..Default::default() };
    let traj = evolve_with(&s0, cfg.t_final, dt, &m, &opts)?;
    let result = SimulateResult {
        model: m,
        steps: traj.steps,
        dt: traj.dt,
        t_final: cfg.t_final,
        hamiltonian_drift: traj.hamiltonian_drift(),
        casimir_drift: traj.casimir_drift(),
        max_pointwise_deviation: traj.max_pointwise_deviation(),
        left_smooth_regime_at: traj.left_smooth_regime_at,
        warnings: traj.warnings.clone(),
        initial: traj.monitors[0],
        last: *traj.monitors.last().expect("at least one monitor"),
        snapshots: traj.snapshots.len(),
    };
    let mut files = vec![("monitors.csv".to_string(), traj.monitors_csv())];
    for s in traj.snapshots.iter().chain(std::iter::once(&traj.final_state)) {
        files.push((format!("fields_t{:.6}.csv", s.time), integrator::state_csv(s)));
    }
    files.dedup_by(|a, b| a.0 == b.0);
    let passed = traj.left_smooth_regime_at.is_none();
    let summary = format!(
        "simulate {}: {} steps of dt = {:.4e} to T = {}\n  relative H drift {:.3e}, C drift {:.3e}\n{}",
        m.name(),
        traj.steps,
        traj.dt,
        cfg.t_final,
        result.hamiltonian_drift,
        result.casimir_drift,
        match traj.left_smooth_regime_at {
            Some(t) => format!("  left the smooth regime at t = {t}\n"),
            None => String::new(),
        }
    );
    Ok(Outcome { passed, result: to_value(&result)?, summary, files })
}

#[derive(Serialize)]
struct EquilibriumResult {
    model: ModelParams,
    p_e: f64,
    rho_e: f64,
    equilibrium_residual: f64,
    manifold_samples: usize,
    max_manifold_residual: f64,
    tolerance: f64,
}

fn check_equilibrium(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let (p_e, rho_e) = models::equilibrium_values(&m)?;
    let residual = stability::check_equilibrium(&models::named_equilibrium(&m, &grid)?, &m)?;
    let samples = stability::manifold_samples(&m, &grid, MANIFOLD_CHECK_SAMPLES, cfg.sample_amplitude, cfg.seed)?;
    let mut worst: f64 = 0.0;
    for s in &samples {
        worst = worst.max(stability::check_equilibrium(s, &m)?);
    }
    let passed = residual < EQUILIBRIUM_TOL && worst < EQUILIBRIUM_TOL;
    let result = EquilibriumResult {
        model: m,
        p_e,
        rho_e,
        equilibrium_residual: residual,
        manifold_samples: samples.len(),
        max_manifold_residual: worst,
        tolerance: EQUILIBRIUM_TOL,
    };
    let summary = format!(
        "check-equilibrium {}: (p_e, rho_e) = ({p_e:.12}, {rho_e:.12})\n  max|rhs| at equilibrium {residual:.3e}, over {} manifold states {worst:.3e}\n",
        m.name(),
        samples.len()
    );
    Ok(Outcome { passed, result: to_value(&result)?, summary, files: Vec::new() })
}

#[derive(Serialize)]
struct FirstVariationResult {
    named: stability::FirstVariation,
    reduced_integrand_max_error: f64,
    exploratory: Option<stability::FirstVariation>,
    tolerance: f64,
}

fn first_variation(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let named = stability::first_variation_report(&m, &grid)?;
    let exact = ExactSolution::for_model(&m)?.sample(0.0, &grid);
    let numeric = stability::reduced_first_variation_integrand(&m, &exact)?;
    let closed = stability::reduced_first_variation_closed_form(&m, &exact);
    let reduced_integrand_max_error = (&numeric - &closed).max_abs();
    let exploratory = cfg.at_p.map(|p| stability::first_variation_at(&m, p, &grid)).transpose()?;
    let passed = named.vanishes() && reduced_integrand_max_error < 1e-12;
    let mut files = Vec::new();
    let mut csv = String::from("x,numeric,closed_form\n");
    for i in 0..grid.n() {
        csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", grid.x(i), numeric.values()[i], closed.values()[i]));
    }
    files.push(("reduced_integrand.csv".to_string(), csv));
    let mut summary = format!(
        "first-variation {}: normalized first variation {:.3e} (tolerance {:.0e}), reduced integrand error {:.3e}\n",
        m.name(),
        named.normalized,
        stability::FIRST_VARIATION_TOL,
        reduced_integrand_max_error
    );
    if let Some(e) = &exploratory {
        summary.push_str(&format!(
            "  exploratory point p = {}: normalized first variation {:.3e} (not part of the verdict)\n",
            e.at_p, e.normalized
        ));
    }
    let result = FirstVariationResult {
        named,
        reduced_integrand_max_error,
        exploratory,
        tolerance: stability::FIRST_VARIATION_TOL,
    };
    Ok(Outcome { passed, result: to_value(&result)?, summary, files })
}

fn verify_inequalities(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let stats = stability::verify_convexity_estimates(&m, &grid, cfg.samples, cfg.sample_amplitude, cfg.seed)?;
    let mut summary = format!(
        "verify-inequalities {}: {} samples, {} violations\n  a_observed {:.6} <= a_bound {:.6}\n",
        m.name(),
        stats.n_samples,
        stats.n_violations,
        stats.a_observed,
        stats.a_bound
    );
    for c in &stats.checks {
        summary.push_str(&format!("  {:<20} violations {:>3}  min slack {:.3e}\n", c.name, c.violations, c.min_slack));
    }
    Ok(Outcome { passed: stats.n_violations == 0, result: to_value(&stats)?, summary, files: Vec::new() })
}

fn stability_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let report = stability::perturbation_experiment(&m, &grid, &cfg.experiment())?;
    let mut csv = String::from("amplitude,on_manifold,status,q_norm,l2,h_drift,c_drift\n");
    for e in report.amplification.iter().chain(report.exploratory.iter().flatten()) {
        csv.push_str(&format!(
            "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            e.amplitude,
            e.on_manifold,
            serde_json::to_value(e.status)?.as_str().unwrap_or_default(),
            e.q_norm,
            e.l2,
            e.h_drift,
            e.c_drift
        ));
    }
    Ok(Outcome {
        passed: report.verdict == Verdict::ConsistentWithStability,
        result: to_value(&report)?,
        summary: report.summary(),
        files: vec![("amplification.csv".to_string(), csv)],
    })
}

#[derive(Serialize)]
struct SolutionResult {
    model: ModelParams,
    residual: f64,
    expanded_residual: f64,
    constraint_residual: f64,
    hamiltonian: f64,
    casimir: f64,
    oracle: crate::solutions::OracleValues,
    hamiltonian_rel_error: f64,
    casimir_rel_error: f64,
}

fn verify_solution(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let sol = ExactSolution::for_model(&m)?;
    let s = sol.sample(0.0, &grid);
    let oracle = sol.oracle_values();
    let hamiltonian = evaluate(&models::hamiltonian_density(&m), &s)?;
    let casimir = evaluate(&m.casimir(), &s)?;
    let result = SolutionResult {
        model: m,
        residual: sol.residual(&grid, cfg.scheme)?,
        expanded_residual: sol.expanded_residual(&grid, cfg.scheme)?,
        constraint_residual: s.constraint_residual(sol.kappa()),
        hamiltonian,
        casimir,
        oracle,
        hamiltonian_rel_error: (hamiltonian - oracle.hamiltonian).abs() / oracle.hamiltonian.abs(),
        casimir_rel_error: (casimir - oracle.casimir).abs() / oracle.casimir.abs(),
    };
    let passed = result.residual < SOLUTION_RESIDUAL_TOL
        && result.hamiltonian_rel_error < ORACLE_RTOL
        && result.casimir_rel_error < ORACLE_RTOL;
    let summary = format!(
        "verify-solution {} (n = {}, {}): residual {:.3e}, H rel. error {:.3e}, C rel. error {:.3e}\n",
        m.name(),
        grid.n(),
        cfg.scheme,
        result.residual,
        result.hamiltonian_rel_error,
        result.casimir_rel_error
    );
    Ok(Outcome {
        passed,
        result: to_value(&result)?,
        summary,
        files: vec![("fields_t0.000000.csv".into(), integrator::state_csv(&s))],
    })
}

#[derive(Serialize)]
struct SpatialRow {
    n: usize,
    spectral: f64,
    central4: f64,
}

#[derive(Serialize)]
struct ConvergenceResult {
    temporal: integrator::TemporalConvergence,
    spatial: Vec<SpatialRow>,
    central4_ratios: Vec<f64>,
}

/// Temporal study on `p = p_e + ¼ sin x`, `ρ = ρ_e` over `T = 0.5`; spatial
/// study of the product-rule residual on the closed-form profile.
fn convergence(cfg: &RunConfig) -> Result<Outcome> {
    let m = cfg.model_params();
    let grid = cfg.grid()?;
    let (pe, re) = models::equilibrium_values(&m)?;
    let s0 = State::new(grid.field(|x| pe + 0.25 * pe * x.sin()), grid.constant(re), 0.0)?;
    let dt = cfg.dt.unwrap_or(0.01);
    let t_final = 50.0 * dt;
    let temporal = integrator::temporal_convergence(&s0, &m, t_final, dt, cfg.scheme, 400)?;
    let sol = ExactSolution::for_model(&m)?;
    let mut spatial = Vec::new();
    for n in [32, 64, 128] {
        let g = Grid::new(n)?;
        spatial.push(SpatialRow {
            n,
            spectral: sol.expanded_residual(&g, Scheme::Spectral)?,
            central4: sol.expanded_residual(&g, Scheme::Central4)?,
        });
    }
    let central4_ratios: Vec<f64> = spatial.windows(2).map(|w| w[0].central4 / w[1].central4).collect();
    let passed = (temporal.ratio - 16.0).abs() <= 0.2 * 16.0
        && spatial.last().is_some_and(|r| r.spectral < 1e-10)
        && central4_ratios.last().is_some_and(|r| (r - 16.0).abs() <= 0.2 * 16.0);
    let mut csv = String::from("n,spectral,central4\n");
    for r in &spatial {
        csv.push_str(&format!("{},{:.16e},{:.16e}\n", r.n, r.spectral, r.central4));
    }
    let summary = format!(
        "convergence {}: RK4 errors {:.3e} / {:.3e} (ratio {:.2}), spectral residual at n = 128 {:.3e}, central4 ratios {:?}\n",
        m.name(),
        temporal.error_coarse,
        temporal.error_fine,
        temporal.ratio,
        spatial.last().map_or(f64::NAN, |r| r.spectral),
        central4_ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
    );
    let result = ConvergenceResult { temporal, spatial, central4_ratios };
    Ok(Outcome { passed, result: to_value(&result)?, summary, files: vec![("spatial_convergence.csv".into(), csv)] })
}
