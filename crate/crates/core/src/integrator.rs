//! Method-of-lines time stepping with conservation monitoring.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{evaluate, QuadraticForm};
use crate::grid::{Field, Scheme};
use crate::models::{self, ModelParams, State, RHO_MIN};

/// CFL safety factor.
pub const CFL_SAFETY: f64 = 0.5;

/// Spectral headroom threshold: the top third of the spectrum may carry at
/// most this fraction of a field's energy.
pub const SPECTRAL_TAIL_LIMIT: f64 = 1e-8;

pub const DEFAULT_SNAPSHOT_EVERY: usize = 10;
pub const DEFAULT_MAX_SNAPSHOTS: usize = 512;

/// Upper bound on the characteristic speeds.
///
/// Chaplygin speeds are `p ± √(2λ)/ρ`. For Born-Infeld a crude
/// over-estimate `|p| + c(1 + max(ρc/a, a/(ρc)))` is used.
pub fn max_wave_speed(s: &State, m: &ModelParams) -> f64 {
    s.p.values()
        .iter()
        .zip(s.rho.values())
        .map(|(&p, &r)| match *m {
            ModelParams::Chaplygin { lambda } => p.abs() + (2.0 * lambda).sqrt() / r,
            ModelParams::BornInfeld { a, c } => p.abs() + c * (1.0 + (r * c / a).max(a / (r * c))),
        })
        .fold(0.0, f64::max)
}

pub fn cfl_dt(s: &State, m: &ModelParams) -> f64 {
    CFL_SAFETY * s.grid().dx() / max_wave_speed(s, m)
}

fn check_stage(rho: &[f64], p: &[f64], stage: usize) -> Result<()> {
    for (i, (&r, &q)) in rho.iter().zip(p).enumerate() {
        if !r.is_finite() || !q.is_finite() {
            return Err(Error::Divergence { index: i });
        }
        if !(r > RHO_MIN) {
            return Err(Error::StagePositivity { stage, index: i, value: r });
        }
    }
    Ok(())
}

fn axpy(base: &Field, k: &Field, h: f64) -> Field {
    base.zip_map(k, |b, k| b + h * k)
}

/// One classical Runge-Kutta step.
pub fn step_rk4(s: &State, dt: f64, m: &ModelParams) -> Result<State> {
    step_rk4_with(s, dt, m, Scheme::Spectral)
}

pub fn step_rk4_with(s: &State, dt: f64, m: &ModelParams, scheme: Scheme) -> Result<State> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let stage = |p: Field, rho: Field, idx: usize| -> Result<(Field, Field)> {
        check_stage(rho.values(), p.values(), idx)?;
        models::rhs_with(&State::from_raw(p, rho, 0.0), m, scheme)
    };
    let (k1p, k1r) = stage(s.p.clone(), s.rho.clone(), 1)?;
    let (k2p, k2r) = stage(axpy(&s.p, &k1p, 0.5 * dt), axpy(&s.rho, &k1r, 0.5 * dt), 2)?;
    let (k3p, k3r) = stage(axpy(&s.p, &k2p, 0.5 * dt), axpy(&s.rho, &k2r, 0.5 * dt), 3)?;
    let (k4p, k4r) = stage(axpy(&s.p, &k3p, dt), axpy(&s.rho, &k3r, dt), 4)?;
    let combine = |base: &Field, k1: &Field, k2: &Field, k3: &Field, k4: &Field| {
        let v = (0..base.len())
            .map(|i| {
                base.values()[i]
                    + dt / 6.0 * (k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i])
            })
            .collect();
        Field::from_raw(base.grid(), v)
    };
    let p = combine(&s.p, &k1p, &k2p, &k3p, &k4p);
    let rho = combine(&s.rho, &k1r, &k2r, &k3r, &k4r);
    check_stage(rho.values(), p.values(), 5)?;
    Ok(State::from_raw(p, rho, s.time + dt))
}

/// Distance reference for `l2_dist` and `q_dist`.
#[derive(Debug, Clone)]
pub struct Reference {
    pub state: State,
    pub form: QuadraticForm,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub scheme: Scheme,
    pub snapshot_every: usize,
    pub max_snapshots: usize,
    pub reference: Option<Reference>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            scheme: Scheme::Spectral,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            max_snapshots: DEFAULT_MAX_SNAPSHOTS,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Monitor {
    pub t: f64,
    #[serde(rename = "H")]
    pub hamiltonian: f64,
    #[serde(rename = "C")]
    pub casimir: f64,
    /// `max |pρ − κ|`, NaN when the model has no constraint manifold.
    pub constraint_residual: f64,
    pub l2_dist: f64,
    pub q_dist: f64,
    pub spectral_tail: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub monitors: Vec<Monitor>,
    /// Strided full states, uniformly thinned once the cap is reached.
    pub snapshots: Vec<State>,
    pub final_state: State,
    pub steps: usize,
    pub dt: f64,
    /// Time at which the spectral tail first exceeded [`SPECTRAL_TAIL_LIMIT`].
    pub left_smooth_regime_at: Option<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn relative_drift(&self, pick: impl Fn(&Monitor) -> f64) -> f64 {
        let first = pick(&self.monitors[0]);
        self.monitors.iter().map(|m| (pick(m) - first).abs() / first.abs()).fold(0.0, f64::max)
    }

    pub fn hamiltonian_drift(&self) -> f64 {
        self.relative_drift(|m| m.hamiltonian)
    }

    pub fn casimir_drift(&self) -> f64 {
        self.relative_drift(|m| m.casimir)
    }

    /// `sup_t max_x |u(t) − u(0)|` over stored snapshots and the final state.
    pub fn max_pointwise_deviation(&self) -> f64 {
        let first = &self.snapshots[0];
        self.snapshots
            .iter()
            .chain(std::iter::once(&self.final_state))
            .map(|s| (&s.p - &first.p).max_abs().max((&s.rho - &first.rho).max_abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,H,C,constraint_residual,l2_dist,q_dist`.
    pub fn monitors_csv(&self) -> String {
        let mut out = String::from("t,H,C,constraint_residual,l2_dist,q_dist\n");
        for m in &self.monitors {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                m.t, m.hamiltonian, m.casimir, m.constraint_residual, m.l2_dist, m.q_dist
            ));
        }
        out
    }
}

/// CSV dump of one state with columns `x,p,rho`.
pub fn state_csv(s: &State) -> String {
    let mut out = String::from("x,p,rho\n");
    for i in 0..s.grid().n() {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", s.grid().x(i), s.p.values()[i], s.rho.values()[i]));
    }
    out
}

struct MonitorContext {
    hamiltonian: crate::functionals::LocalFunctional,
    casimir: crate::functionals::LocalFunctional,
    kappa: Option<f64>,
    reference: Option<Reference>,
}

impl MonitorContext {
    fn record(&self, s: &State) -> Result<Monitor> {
        let (l2_dist, q_dist) = match &self.reference {
            Some(r) => {
                let dp = &s.p - &r.state.p;
                let dr = &s.rho - &r.state.rho;
                let l2 = QuadraticForm::l2(s.grid()).evaluate(&dp, &dr).sqrt();
                (l2, r.form.evaluate(&dp, &dr).max(0.0).sqrt())
            }
            None => (0.0, 0.0),
        };
        let grid = s.grid();
        Ok(Monitor {
            t: s.time,
            hamiltonian: evaluate(&self.hamiltonian, s)?,
            casimir: evaluate(&self.casimir, s)?,
            constraint_residual: self.kappa.map_or(f64::NAN, |k| s.constraint_residual(k)),
            l2_dist,
            q_dist,
            spectral_tail: grid
                .upper_third_energy_fraction(s.p.values())
                .max(grid.upper_third_energy_fraction(s.rho.values())),
        })
    }
}

/// Integrates from `s0.time` to `s0.time + t_final` with a fixed step.
pub fn evolve(s0: &State, t_final: f64, dt: f64, m: &ModelParams, snapshot_every: usize) -> Result<Trajectory> {
    let opts = EvolveOptions { snapshot_every, ..EvolveOptions::default() };
    evolve_with(s0, t_final, dt, m, &opts)
}

pub fn evolve_with(s0: &State, t_final: f64, dt: f64, m: &ModelParams, opts: &EvolveOptions) -> Result<Trajectory> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Parameter(format!("final time must be positive, got {t_final}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    if opts.snapshot_every == 0 || opts.max_snapshots < 2 {
        return Err(Error::Parameter("snapshot stride must be >= 1 and the snapshot cap >= 2".into()));
    }
    let mut warnings = Vec::new();
    let limit = cfl_dt(s0, m);
    if dt > limit {
        warnings.push(format!("dt = {dt:e} exceeds the CFL estimate {limit:e}"));
    }
    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let ctx = MonitorContext {
        hamiltonian: models::hamiltonian_density(m),
        casimir: m.casimir(),
        kappa: m.kappa().ok(),
        reference: opts.reference.clone(),
    };

    let t0 = s0.time;
    let mut state = s0.clone();
    let mut times = vec![t0];
    let first = ctx.record(&state).map_err(|e| e.at_time(t0))?;
    let mut left_smooth_regime_at = (first.spectral_tail > SPECTRAL_TAIL_LIMIT).then_some(t0);
    let mut monitors = vec![first];
    let mut snapshots = vec![state.clone()];
    let mut stride = opts.snapshot_every;

    for step in 1..=steps {
        let time = state.time;
        state = step_rk4_with(&state, h, m, opts.scheme).map_err(|e| e.at_time(time))?;
        state.time = t0 + step as f64 * h;
        if step % opts.snapshot_every == 0 || step == steps {
            let rec = ctx.record(&state).map_err(|e| e.at_time(state.time))?;
            if left_smooth_regime_at.is_none() && rec.spectral_tail > SPECTRAL_TAIL_LIMIT {
                left_smooth_regime_at = Some(state.time);
            }
            times.push(state.time);
            monitors.push(rec);
        }
        if step % stride == 0 {
            snapshots.push(state.clone());
            if snapshots.len() > opts.max_snapshots {
                let kept: Vec<State> = snapshots.into_iter().step_by(2).collect();
                snapshots = kept;
                stride *= 2;
            }
        }
    }

    Ok(Trajectory { times, monitors, snapshots, final_state: state, steps, dt: h, left_smooth_regime_at, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TemporalConvergence {
    pub dt: f64,
    pub reference_dt: f64,
    /// Max-norm error at the final time with step `dt`.
    pub error_coarse: f64,
    /// Same with step `dt/2`.
    pub error_fine: f64,
    pub ratio: f64,
}

fn run_fixed(s0: &State, steps: usize, h: f64, m: &ModelParams, scheme: Scheme) -> Result<State> {
    let mut s = s0.clone();
    for k in 0..steps {
        s = step_rk4_with(&s, h, m, scheme).map_err(|e| e.at_time(s0.time + k as f64 * h))?;
    }
    Ok(s)
}

/// RK4 errors at `dt` and `dt/2` against a run with step
/// `dt/reference_factor`, all on the same grid so only the time
/// discretization differs. `t_final/dt` must be an integer.
pub fn temporal_convergence(
    s0: &State,
    m: &ModelParams,
    t_final: f64,
    dt: f64,
    scheme: Scheme,
    reference_factor: usize,
) -> Result<TemporalConvergence> {
    let steps = (t_final / dt).round();
    if !(dt > 0.0) || steps < 1.0 || ((steps * dt - t_final) / t_final).abs() > 1e-9 {
        return Err(Error::Parameter(format!("final time {t_final} must be a positive multiple of dt = {dt}")));
    }
    if reference_factor < 4 {
        return Err(Error::Parameter("reference step must be at least 4x finer".into()));
    }
    let steps = steps as usize;
    let h = t_final / steps as f64;
    let coarse = run_fixed(s0, steps, h, m, scheme)?;
    let fine = run_fixed(s0, 2 * steps, h / 2.0, m, scheme)?;
    let reference = run_fixed(s0, reference_factor * steps, h / reference_factor as f64, m, scheme)?;
    let err = |s: &State| (&s.p - &reference.p).max_abs().max((&s.rho - &reference.rho).max_abs());
    let (error_coarse, error_fine) = (err(&coarse), err(&fine));
    Ok(TemporalConvergence {
        dt: h,
        reference_dt: h / reference_factor as f64,
        error_coarse,
        error_fine,
        ratio: error_coarse / error_fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::solutions::ExactSolution;
    use std::f64::consts::PI;

    fn chaplygin() -> ModelParams {
        ModelParams::chaplygin(0.5).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_step() {
        let g = Grid::new(64).unwrap();
        for m in [chaplygin(), ModelParams::born_infeld(1.0, 1.0).unwrap()] {
            let s = models::named_equilibrium(&m, &g).unwrap();
            let next = step_rk4(&s, 0.37, &m).unwrap();
            assert!((&next.p - &s.p).max_abs() < 1e-14);
            assert!((&next.rho - &s.rho).max_abs() < 1e-14);
            assert_eq!(next.time, 0.37);
        }
    }

    #[test]
    fn exact_profile_drift_over_a_thousand_steps() {
        let g = Grid::new(128).unwrap();
        let m = chaplygin();
        let s0 = ExactSolution::chaplygin(0.5).unwrap().sample(0.0, &g);
        let mut s = s0.clone();
        for _ in 0..1000 {
            s = step_rk4(&s, 1e-3, &m).unwrap();
        }
        let drift = (&s.p - &s0.p).max_abs().max((&s.rho - &s0.rho).max_abs());
        assert!(drift < 1e-10, "drift = {drift:e}");
    }

    #[test]
    fn step_rejects_bad_dt_and_reports_stage() {
        let g = Grid::new(32).unwrap();
        let m = chaplygin();
        let s = State::new(g.field(|x| 2.0 + x.sin()), g.constant(1.0), 0.0).unwrap();
        assert!(step_rk4(&s, 0.0, &m).is_err());
        assert!(step_rk4(&s, -1.0, &m).is_err());
        // a huge step drives the density negative in a Runge-Kutta stage
        match step_rk4(&s, 5.0, &m) {
            Err(Error::StagePositivity { stage, .. }) => assert!(stage >= 2),
            Err(Error::Divergence { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cfl_examples() {
        let g = Grid::new(128).unwrap();
        let s = State::constant(&g, 1.0, 1.0).unwrap();
        let dt = cfl_dt(&s, &chaplygin());
        assert!((dt - 0.5 * (2.0 * PI / 128.0) / 2.0).abs() < 1e-15);
        let g2 = Grid::new(256).unwrap();
        let s2 = State::constant(&g2, 1.0, 1.0).unwrap();
        assert!((cfl_dt(&s2, &chaplygin()) - 0.5 * dt).abs() < 1e-15);
        let bi = ModelParams::born_infeld(1.0, 1.0).unwrap();
        assert!(cfl_dt(&s, &bi) > 0.0);
        let s3 = State::new(g.field(|x| -3.0 * x.sin()), g.field(|x| 0.5 + 0.1 * x.cos()), 0.0).unwrap();
        assert!(cfl_dt(&s3, &chaplygin()) > 0.0 && cfl_dt(&s3, &bi) > 0.0);
    }

    #[test]
    fn evolve_exact_profile_conserves_everything() {
        let g = Grid::new(128).unwrap();
        let m = chaplygin();
        let s0 = ExactSolution::chaplygin(0.5).unwrap().sample(0.0, &g);
        let dt = 0.5 * cfl_dt(&s0, &m);
        let traj = evolve(&s0, 10.0, dt, &m, DEFAULT_SNAPSHOT_EVERY).unwrap();
        assert!((traj.final_state.time - 10.0).abs() < dt);
        assert!(traj.hamiltonian_drift() < 1e-10);
        assert!(traj.casimir_drift() < 1e-10);
        assert!(traj.monitors.iter().all(|m| m.constraint_residual < 1e-10));
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.times.len(), traj.monitors.len());
        assert!(traj.left_smooth_regime_at.is_none());
        assert!(traj.warnings.is_empty());
    }

    #[test]
    fn evolve_warns_above_cfl() {
        let g = Grid::new(32).unwrap();
        let m = chaplygin();
        let s0 = models::named_equilibrium(&m, &g).unwrap();
        let dt = 2.0 * cfl_dt(&s0, &m);
        let traj = evolve(&s0, 4.0 * dt, dt, &m, 1).unwrap();
        assert_eq!(traj.warnings.len(), 1);
        assert!(evolve(&s0, -1.0, dt, &m, 1).is_err());
        assert!(evolve(&s0, 1.0, dt, &m, 0).is_err());
    }

    #[test]
    fn snapshot_thinning_respects_cap() {
        let g = Grid::new(16).unwrap();
        let m = chaplygin();
        let s0 = models::named_equilibrium(&m, &g).unwrap();
        let opts = EvolveOptions { snapshot_every: 1, max_snapshots: 8, ..EvolveOptions::default() };
        let traj = evolve_with(&s0, 1.0, 0.01, &m, &opts).unwrap();
        assert!(traj.snapshots.len() <= 8);
        assert!(traj.snapshots.windows(2).all(|w| w[1].time > w[0].time));
        assert_eq!(traj.monitors.len(), 101);
    }

    #[test]
    fn failure_is_annotated_with_time() {
        let g = Grid::new(32).unwrap();
        let m = chaplygin();
        let s = State::new(g.field(|x| 2.0 + x.sin()), g.constant(1.0), 0.0).unwrap();
        match evolve(&s, 20.0, 5.0, &m, 1) {
            Err(Error::AtTime { time, .. }) => assert_eq!(time, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monitor_csv_header() {
        let g = Grid::new(16).unwrap();
        let m = chaplygin();
        let s0 = models::named_equilibrium(&m, &g).unwrap();
        let traj = evolve(&s0, 0.1, 0.05, &m, 1).unwrap();
        let csv = traj.monitors_csv();
        assert!(csv.starts_with("t,H,C,constraint_residual,l2_dist,q_dist\n"));
        assert_eq!(csv.lines().count(), 1 + traj.monitors.len());
        assert!(state_csv(&s0).starts_with("x,p,rho\n"));
    }
    #[test]
    fn rk4_is_fourth_order_in_time() {
        let g = Grid::new(64).unwrap();
        let s0 = State::new(g.field(|x| 2.0 + 0.5 * x.sin()), g.constant(1.0), 0.0).unwrap();
        let c = temporal_convergence(&s0, &chaplygin(), 0.5, 0.01, Scheme::Spectral, 400).unwrap();
        assert!((c.ratio - 16.0).abs() < 0.2 * 16.0, "{c:?}");
        assert!(temporal_convergence(&s0, &chaplygin(), 0.5, 0.03, Scheme::Spectral, 400).is_err());
    }
}
