use casimir_gas::functionals::{poisson_bracket_with, second_order_remainder, LocalFunctional, QuadraticForm};
use casimir_gas::grid::{derivative, inner, integrate, Grid, Scheme};
use casimir_gas::models::{self, ModelParams, State};
use casimir_gas::stability::{sample_manifold_state, DEFAULT_MODES};
use proptest::prelude::*;

fn trig(grid: &Grid, base: f64, coeffs: &[(f64, f64)]) -> casimir_gas::grid::Field {
    grid.field(|x| {
        base + coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| a * ((k + 1) as f64 * x).cos() + b * ((k + 1) as f64 * x).sin())
            .sum::<f64>()
    })
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64), 1..5)
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Spectral), Just(Scheme::Central4)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_is_skew_adjoint(a in coeffs(), b in coeffs(), s in scheme()) {
        let g = Grid::new(64).unwrap();
        let (f, h) = (trig(&g, 0.3, &a), trig(&g, -0.1, &b));
        let lhs = inner(&derivative(&f, s).unwrap(), &h);
        let rhs = -inner(&f, &derivative(&h, s).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn derivative_is_linear_and_annihilates_constants(a in coeffs(), b in coeffs(), k in -3.0..3.0f64, s in scheme()) {
        let g = Grid::new(32).unwrap();
        let (f, h) = (trig(&g, 1.0, &a), trig(&g, 2.0, &b));
        let combined = derivative(&(&f + &(&h * k)), s).unwrap();
        let separate = &derivative(&f, s).unwrap() + &(&derivative(&h, s).unwrap() * k);
        prop_assert!((&combined - &separate).max_abs() < 1e-12);
        prop_assert!(integrate(&derivative(&f, s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn every_manifold_state_is_steady(seed in any::<u64>(), amp in 0.0..0.5f64, lambda in 0.1..3.0f64) {
        let g = Grid::new(64).unwrap();
        let m = ModelParams::chaplygin(lambda).unwrap();
        let kappa = m.kappa().unwrap();
        let s = sample_manifold_state(seed, amp, kappa, 1.3, DEFAULT_MODES, &g).unwrap();
        prop_assert!(s.constraint_residual(kappa) < 1e-13 * kappa.max(1.0));
        let (dp, dr) = models::rhs(&s, &m).unwrap();
        prop_assert!(dp.max_abs().max(dr.max_abs()) < 1e-10);
    }

    #[test]
    fn hamiltonian_is_conserved_by_the_bracket(a in coeffs(), b in coeffs(), s in scheme()) {
        let g = Grid::new(64).unwrap();
        let st = State::new(trig(&g, 1.5, &a), trig(&g, 1.0, &b), 0.0).unwrap();
        for m in [ModelParams::chaplygin(0.5).unwrap(), ModelParams::born_infeld(1.0, 1.0).unwrap()] {
            let h = models::hamiltonian_density(&m);
            let (v, scale) = poisson_bracket_with(&h, &h, &st, s).unwrap();
            prop_assert!(v.abs() <= 1e-13 * scale.max(1.0));
        }
    }

    #[test]
    fn remainder_of_a_quadratic_is_its_quadratic_part(a in coeffs(), b in coeffs(), w in 0.1..2.0f64) {
        // F = ∫ w ρ² has remainder exactly ∫ w Δρ²
        let g = Grid::new(32).unwrap();
        let u_e = State::constant(&g, 1.0, 1.0).unwrap();
        let u = State::new(trig(&g, 1.0, &a), trig(&g, 1.0, &b), 0.0).unwrap();
        let f = LocalFunctional::new("w rho^2", move |_, r| w * r * r, |_, _| 0.0, move |_, r| 2.0 * w * r);
        let drho = &u.rho - &u_e.rho;
        let expected = QuadraticForm::l2(&g).evaluate(&g.zeros(), &drho) * w;
        prop_assert!((second_order_remainder(&f, &u_e, &u).unwrap() - expected).abs() < 1e-12);
    }
}
