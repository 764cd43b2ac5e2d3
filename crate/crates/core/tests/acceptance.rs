//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use casimir_gas::functionals::{evaluate, jacobi_cyclic_sum, poisson_bracket_with, LocalFunctional};
use casimir_gas::grid::{Grid, Scheme};
use casimir_gas::integrator::{cfl_dt, evolve, temporal_convergence};
use casimir_gas::models::{self, chaplygin_limit_gap, ModelParams, State};
use casimir_gas::solutions::ExactSolution;
use casimir_gas::stability::{
    self, derive_seed, first_variation_report, perturbation_experiment, reduced_first_variation_closed_form,
    reduced_first_variation_integrand, sample_manifold_state, sample_off_manifold_state, verify_convexity_estimates,
    ExperimentConfig, RunStatus, Verdict, AMPLIFICATION_BOUND,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn chaplygin(lambda: f64) -> ModelParams {
    ModelParams::chaplygin(lambda).unwrap()
}

fn born_infeld() -> ModelParams {
    ModelParams::born_infeld(1.0, 1.0).unwrap()
}

fn manifold_state(m: &ModelParams, grid: &Grid, seed: u64, amplitude: f64) -> State {
    let (pe, _) = models::equilibrium_values(m).unwrap();
    sample_manifold_state(seed, amplitude, m.kappa().unwrap(), pe, stability::DEFAULT_MODES, grid).unwrap()
}

fn random_polynomial(rng: &mut ChaCha8Rng) -> LocalFunctional {
    let mut c = [[0.0; 4]; 4];
    for (i, row) in c.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i + j <= 3 {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    LocalFunctional::polynomial(c)
}

/// Positive smooth state away from any manifold.
fn random_state(rng: &mut ChaCha8Rng, grid: &Grid) -> State {
    let mut profile = |base: f64| {
        let coeffs: Vec<(f64, f64)> = (1..=4).map(|_| (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))).collect();
        grid.field(|x| {
            base + coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| a * ((k + 1) as f64 * x).cos() + b * ((k + 1) as f64 * x).sin())
                .sum::<f64>()
        })
    };
    let p = profile(1.5);
    let rho = profile(1.2);
    State::new(p, rho, 0.0).unwrap()
}

fn equilibrium_manifolds() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(128).unwrap();
    let mut worst: f64 = 0.0;
    for m in [chaplygin(0.5), chaplygin(2.0), born_infeld()] {
        for i in 0..50 {
            let s = manifold_state(&m, &grid, derive_seed(1, i), 0.3);
            worst = worst.max(stability::check_equilibrium(&s, &m).unwrap());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && within(Duration::from_secs(5), elapsed),
        format!("max|rhs| = {worst:.2e} over 150 manifold states, {elapsed:.2?}"),
    )
}

fn casimir_commutation() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(128).unwrap();
    let m = chaplygin(0.5);
    let h = models::hamiltonian_density(&m);
    let c = LocalFunctional::chaplygin_casimir();
    let mut worst_c: f64 = 0.0;
    for i in 0..50 {
        let s = manifold_state(&m, &grid, derive_seed(2, i), 0.3);
        worst_c = worst_c.max(poisson_bracket_with(&c, &h, &s, Scheme::Spectral).unwrap().0.abs());
    }
    let bi = born_infeld();
    let h = models::hamiltonian_density(&bi);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_f: f64 = 0.0;
    for i in 0..20 {
        let f = random_polynomial(&mut rng);
        let s = manifold_state(&bi, &grid, derive_seed(4, i), 0.3);
        worst_f = worst_f.max(poisson_bracket_with(&f, &h, &s, Scheme::Spectral).unwrap().0.abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_c < 1e-10 && worst_f < 1e-10 && within(Duration::from_secs(5), elapsed),
        format!("max|{{C,H}}| = {worst_c:.2e}, max|{{F,H}}| = {worst_f:.2e}, {elapsed:.2?}"),
    )
}

fn first_variations() -> Outcome {
    let grid = Grid::new(128).unwrap();
    let mut worst_fv: f64 = 0.0;
    let mut worst_integrand: f64 = 0.0;
    for m in [chaplygin(0.5), chaplygin(2.0), born_infeld()] {
        worst_fv = worst_fv.max(first_variation_report(&m, &grid).unwrap().normalized);
        let mut states = vec![ExactSolution::for_model(&m).unwrap().sample(0.0, &grid)];
        states.extend((0..10).map(|i| manifold_state(&m, &grid, derive_seed(5, i), 0.3)));
        for s in &states {
            let numeric = reduced_first_variation_integrand(&m, s).unwrap();
            let closed = reduced_first_variation_closed_form(&m, s);
            worst_integrand = worst_integrand.max((&numeric - &closed).max_abs());
        }
    }
    outcome(
        worst_fv < 1e-12 && worst_integrand < 1e-13,
        format!("normalized first variation {worst_fv:.2e}, reduced integrand error {worst_integrand:.2e}"),
    )
}

fn q_forms() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(128).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for m in [chaplygin(0.5), born_infeld()] {
        let st = verify_convexity_estimates(&m, &grid, 100, 0.2, 42).unwrap();
        ok &= st.n_samples == 100 && st.n_violations == 0 && st.a_observed <= st.a_bound;
        detail.push(format!(
            "{}: {} violations, identity residual {:.1e}, a {:.3} <= {:.3}",
            m.name(),
            st.n_violations,
            st.max_residual,
            st.a_observed,
            st.a_bound
        ));
    }
    let elapsed = start.elapsed();
    ok &= within(Duration::from_secs(10), elapsed);
    outcome(ok, format!("{}; {elapsed:.2?}", detail.join("; ")))
}

fn oracles() -> Outcome {
    let grid = Grid::new(256).unwrap();
    let mut worst: f64 = 0.0;
    for sol in [ExactSolution::chaplygin(0.5).unwrap(), ExactSolution::born_infeld()] {
        let s = sol.sample(0.0, &grid);
        let h = evaluate(&models::hamiltonian_density(&sol.model), &s).unwrap();
        let c = evaluate(&sol.model.casimir(), &s).unwrap();
        // closed forms written out independently of the library
        let pi = std::f64::consts::PI;
        let (h_exact, c_exact) = match sol.model {
            ModelParams::Chaplygin { .. } => (4.0 * pi, 4.0 * pi / 3f64.powf(1.5)),
            ModelParams::BornInfeld { .. } => {
                let v = 2.0 * pi / 3f64.sqrt() + 4.0 * pi;
                (v, -0.5 * v)
            }
        };
        worst = worst.max((h - h_exact).abs() / h_exact.abs()).max((c - c_exact).abs() / c_exact.abs());
    }
    outcome(worst < 1e-12, format!("max relative error {worst:.2e} at n = 256"))
}

fn conservation() -> Outcome {
    let grid = Grid::new(128).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut longest = Duration::ZERO;
    for m in [chaplygin(0.5), born_infeld()] {
        let center = models::equilibrium_values(&m).unwrap();
        let on = manifold_state(&m, &grid, 6, 1e-2);
        let off = sample_off_manifold_state(7, 1e-2, center, stability::DEFAULT_MODES, &grid).unwrap();
        for (label, s0) in [("on", on), ("off", off)] {
            let start = Instant::now();
            let traj = evolve(&s0, 10.0, 0.5 * cfl_dt(&s0, &m), &m, 10).unwrap();
            longest = longest.max(start.elapsed());
            let (dh, dc) = (traj.hamiltonian_drift(), traj.casimir_drift());
            // the Casimir is conserved on the constraint manifold only
            ok &= dh < 1e-9 && (label == "off" || dc < 1e-9);
            detail.push(format!("{} {label}-manifold: dH {dh:.1e}, dC {dc:.1e}", m.name()));
        }
    }
    ok &= within(Duration::from_secs(30), longest);
    outcome(ok, format!("{}; longest run {longest:.2?}", detail.join(", ")))
}

fn convergence() -> Outcome {
    let grid = Grid::new(64).unwrap();
    let m = chaplygin(0.5);
    let s0 = State::new(grid.field(|x| 2.0 + 0.5 * x.sin()), grid.constant(1.0), 0.0).unwrap();
    let t = temporal_convergence(&s0, &m, 0.5, 0.01, Scheme::Spectral, 400).unwrap();
    let g128 = Grid::new(128).unwrap();
    let mut spatial: f64 = 0.0;
    for sol in [ExactSolution::chaplygin(0.5).unwrap(), ExactSolution::born_infeld()] {
        spatial = spatial.max(sol.expanded_residual(&g128, Scheme::Spectral).unwrap());
    }
    outcome(
        (t.ratio - 16.0).abs() <= 0.2 * 16.0 && spatial < 1e-10,
        format!(
            "RK4 ratio {:.3} ({:.2e} / {:.2e}), spectral error at n = 128 {spatial:.2e}",
            t.ratio, t.error_coarse, t.error_fine
        ),
    )
}

fn stability_sweep() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(128).unwrap();
    let cfg = ExperimentConfig { amplitudes: vec![1e-3, 1e-2, 1e-1], t_final: 10.0, ..ExperimentConfig::default() };
    let mut ok = true;
    let mut detail = Vec::new();
    for m in [chaplygin(0.5), born_infeld()] {
        let report = perturbation_experiment(&m, &grid, &cfg).unwrap();
        let finite = report
            .amplification
            .iter()
            .all(|e| e.status == RunStatus::Completed && e.q_norm.is_finite() && e.l2.is_finite());
        let bound = report.amplification.iter().map(|e| e.q_norm.max(e.l2)).fold(0.0, f64::max);
        ok &= report.verdict == Verdict::ConsistentWithStability && finite && bound <= AMPLIFICATION_BOUND;
        detail.push(format!("{}: max amplification {bound:.6} ({:?})", m.name(), report.verdict));
    }
    let elapsed = start.elapsed();
    ok &= within(Duration::from_secs(180), elapsed);
    outcome(ok, format!("{}; K = {AMPLIFICATION_BOUND}; {elapsed:.2?}", detail.join("; ")))
}

fn limit_check() -> Outcome {
    let grid = Grid::new(128).unwrap();
    let s = State::new(grid.field(|x| 2.0 + 0.5 * x.sin()), grid.field(|x| 1.0 + 0.3 * x.cos()), 0.0).unwrap();
    let a = 1.0;
    let gaps: Vec<f64> = [10.0, 100.0, 1000.0].iter().map(|&c| chaplygin_limit_gap(&s, a, c).unwrap()).collect();
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    outcome(
        ratios.iter().all(|r| (50.0..=200.0).contains(r)),
        format!(
            "gaps {:.2e} {:.2e} {:.2e}, decade ratios {:.2} {:.2}",
            gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]
        ),
    )
}

fn bracket_axioms() -> Outcome {
    let grid = Grid::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut skew, mut jacobi): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let (f, g, k) = (random_polynomial(&mut rng), random_polynomial(&mut rng), random_polynomial(&mut rng));
        let s = random_state(&mut rng, &grid);
        for scheme in [Scheme::Spectral, Scheme::Central4] {
            let (fg, scale) = poisson_bracket_with(&f, &g, &s, scheme).unwrap();
            let (gf, _) = poisson_bracket_with(&g, &f, &s, scheme).unwrap();
            skew = skew.max((fg + gf).abs() / scale);
            let (sum, scale) = jacobi_cyclic_sum(&f, &g, &k, &s, scheme).unwrap();
            jacobi = jacobi.max(sum.abs() / scale);
        }
    }
    outcome(
        skew < 1e-10 && jacobi < 1e-10,
        format!("skew-symmetry {skew:.2e}, Jacobi {jacobi:.2e} (relative to term scale)"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("equilibrium manifolds", equilibrium_manifolds),
        ("casimir commutation", casimir_commutation),
        ("first variations", first_variations),
        ("q-form identities and inequalities", q_forms),
        ("exact-solution oracles", oracles),
        ("conservation", conservation),
        ("convergence", convergence),
        ("stability sweep", stability_sweep),
        ("chaplygin limit", limit_check),
        ("bracket axioms", bracket_axioms),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failures += 1;
        }
        println!("[{}] {:>2}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
