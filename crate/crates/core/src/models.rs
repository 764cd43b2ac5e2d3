//! The Chaplygin gas and Born-Infeld Hamiltonian systems.
//!
//! Both are written in conservation form `∂t p = −∂x F_p`, `∂t ρ = −∂x F_ρ`
//! where the fluxes are the partials of the Hamiltonian density,
//! `F_p = h_ρ` and `F_ρ = h_p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::LocalFunctional;
use crate::grid::{derivative, Field, Grid, Scheme};

/// States with `min ρ` below this are rejected.
pub const RHO_MIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelParams {
    Chaplygin { lambda: f64 },
    BornInfeld { a: f64, c: f64 },
}

impl ModelParams {
    pub fn chaplygin(lambda: f64) -> Result<Self> {
        let m = ModelParams::Chaplygin { lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn born_infeld(a: f64, c: f64) -> Result<Self> {
        let m = ModelParams::BornInfeld { a, c };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            ModelParams::Chaplygin { lambda } => positive("lambda", lambda),
            ModelParams::BornInfeld { a, c } => {
                positive("a", a)?;
                positive("c", c)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelParams::Chaplygin { .. } => "chaplygin",
            ModelParams::BornInfeld { .. } => "born-infeld",
        }
    }

    /// Constraint manifold `pρ = κ` consisting of steady states.
    pub fn constraint_manifold(&self) -> Result<ConstraintManifold> {
        match *self {
            ModelParams::Chaplygin { lambda } => Ok(ConstraintManifold { kappa: (2.0 * lambda).sqrt() }),
            ModelParams::BornInfeld { a, c } if a == 1.0 && c == 1.0 => Ok(ConstraintManifold { kappa: 1.0 }),
            ModelParams::BornInfeld { a, c } => Err(Error::Unsupported(format!(
                "the Born-Infeld constraint manifold is only set up for a = c = 1 (got a = {a}, c = {c})"
            ))),
        }
    }

    pub fn kappa(&self) -> Result<f64> {
        self.constraint_manifold().map(|m| m.kappa)
    }

    /// Casimir functional used for this model's energy-Casimir analysis.
    pub fn casimir(&self) -> LocalFunctional {
        match self {
            ModelParams::Chaplygin { .. } => LocalFunctional::chaplygin_casimir(),
            ModelParams::BornInfeld { .. } => LocalFunctional::born_infeld_casimir(),
        }
    }
}

/// The set `pρ = κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintManifold {
    pub kappa: f64,
}

impl ConstraintManifold {
    /// The manifold state over a given momentum profile; `p` must be positive.
    pub fn state_from_momentum(&self, p: Field, time: f64) -> Result<State> {
        if let Some(index) = p.values().iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Parameter(format!(
                "manifold states need p > 0, got p = {} at grid index {index}",
                p.values()[index]
            )));
        }
        let kappa = self.kappa;
        let rho = p.map(|p| kappa / p);
        State::new(p, rho, time)
    }
}

/// Momentum and density on a shared grid, with `ρ > 0` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub p: Field,
    pub rho: Field,
    pub time: f64,
}

impl State {
    pub fn new(p: Field, rho: Field, time: f64) -> Result<Self> {
        if p.grid() != rho.grid() {
            return Err(Error::GridMismatch { left: p.grid().n(), right: rho.grid().n() });
        }
        p.check_finite()?;
        rho.check_finite()?;
        check_positive(&rho)?;
        Ok(State { p, rho, time })
    }

    pub(crate) fn from_raw(p: Field, rho: Field, time: f64) -> Self {
        State { p, rho, time }
    }

    pub fn constant(grid: &Grid, p: f64, rho: f64) -> Result<Self> {
        State::new(grid.constant(p), grid.constant(rho), 0.0)
    }

    pub fn grid(&self) -> &Grid {
        self.p.grid()
    }

    /// `max |pρ − κ|`.
    pub fn constraint_residual(&self, kappa: f64) -> f64 {
        self.p.values().iter().zip(self.rho.values()).fold(0.0, |m, (p, r)| m.max((p * r - kappa).abs()))
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }
}

fn check_positive(rho: &Field) -> Result<()> {
    match rho.values().iter().position(|r| !(*r > RHO_MIN)) {
        Some(index) => Err(Error::Positivity { index, value: rho.values()[index] }),
        None => Ok(()),
    }
}

pub(crate) fn check_same_grid(a: &State, b: &State) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch { left: a.grid().n(), right: b.grid().n() });
    }
    Ok(())
}

/// Pointwise `(F_p, F_ρ)`.
pub fn pointwise_flux(m: &ModelParams, p: f64, rho: f64) -> (f64, f64) {
    match *m {
        ModelParams::Chaplygin { lambda } => (0.5 * p * p - lambda / (rho * rho), p * rho),
        ModelParams::BornInfeld { a, c } => {
            let s = (rho * rho * c * c + a * a).sqrt();
            let t = (c * c + p * p).sqrt();
            (rho * c * c * t / s, p * s / t)
        }
    }
}

/// Fluxes with state-independent constants removed; the tendencies are
/// unchanged. For Born-Infeld `F_p − c²` is rewritten so that large `c`
/// does not cost digits.
fn tendency_flux(m: &ModelParams, p: f64, rho: f64) -> (f64, f64) {
    match *m {
        ModelParams::Chaplygin { .. } => pointwise_flux(m, p, rho),
        ModelParams::BornInfeld { a, c } => {
            let s = (rho * rho * c * c + a * a).sqrt();
            let t = (c * c + p * p).sqrt();
            // rho c t / s with both roots scaled by c; A = t/c, B = s/(rho c)
            let big_a = t / c;
            let big_b = s / (rho * c);
            let shifted = (p * p - a * a / (rho * rho)) / ((big_a + big_b) * big_b);
            (shifted, p * s / t)
        }
    }
}

/// `(F_p, F_ρ)` with `rhs = (−∂x F_p, −∂x F_ρ)`.
pub fn flux(s: &State, m: &ModelParams) -> Result<(Field, Field)> {
    check_positive(&s.rho)?;
    let (fp, fr) = fluxes_by(s, |p, r| pointwise_flux(m, p, r));
    Ok((fp, fr))
}

fn fluxes_by(s: &State, f: impl Fn(f64, f64) -> (f64, f64)) -> (Field, Field) {
    let (fp, fr): (Vec<f64>, Vec<f64>) = s.p.values().iter().zip(s.rho.values()).map(|(&p, &r)| f(p, r)).unzip();
    (Field::from_raw(s.grid(), fp), Field::from_raw(s.grid(), fr))
}

/// `(∂p/∂t, ∂ρ/∂t)` with the spectral derivative.
pub fn rhs(s: &State, m: &ModelParams) -> Result<(Field, Field)> {
    rhs_with(s, m, Scheme::Spectral)
}

pub fn rhs_with(s: &State, m: &ModelParams, scheme: Scheme) -> Result<(Field, Field)> {
    check_positive(&s.rho)?;
    let (fp, fr) = fluxes_by(s, |p, r| tendency_flux(m, p, r));
    let dp = derivative(&fp, scheme)?.map(|v| -v);
    let dr = derivative(&fr, scheme)?.map(|v| -v);
    Ok((dp, dr))
}

/// Hamiltonian density with exact first and second partials.
pub fn hamiltonian_density(m: &ModelParams) -> LocalFunctional {
    match *m {
        ModelParams::Chaplygin { lambda } => LocalFunctional::new(
            "H_chaplygin",
            move |p, r| 0.5 * r * p * p + lambda / r,
            |p, r| r * p,
            move |p, r| 0.5 * p * p - lambda / (r * r),
        )
        .with_hessian(move |p, r| [r, p, 2.0 * lambda / (r * r * r)]),
        ModelParams::BornInfeld { a, c } => {
            let roots = move |p: f64, r: f64| ((r * r * c * c + a * a).sqrt(), (c * c + p * p).sqrt());
            LocalFunctional::new(
                "H_born_infeld",
                move |p, r| {
                    let (s, t) = roots(p, r);
                    s * t
                },
                move |p, r| {
                    let (s, t) = roots(p, r);
                    p * s / t
                },
                move |p, r| {
                    let (s, t) = roots(p, r);
                    r * c * c * t / s
                },
            )
            .with_hessian(move |p, r| {
                let (s, t) = roots(p, r);
                [s * c * c / (t * t * t), (p / t) * (r * c * c / s), c * c * a * a * t / (s * s * s)]
            })
        }
    }
}

/// Max-norm gap between Born-Infeld tendencies at `(a, c)` and Chaplygin
/// tendencies with `λ = a²/2`. Shrinks like `1/c²`.
pub fn chaplygin_limit_gap(s: &State, a: f64, c: f64) -> Result<f64> {
    if c < 1.0 {
        return Err(Error::Parameter(format!("the limit gap needs c >= 1, got c = {c}")));
    }
    let bi = ModelParams::born_infeld(a, c)?;
    let ch = ModelParams::chaplygin(0.5 * a * a)?;
    check_positive(&s.rho)?;
    // differentiate the flux difference once; identical to differencing tendencies
    let (gp, gr) = fluxes_by(s, |p, r| {
        let (bp, br) = tendency_flux(&bi, p, r);
        let (cp, cr) = tendency_flux(&ch, p, r);
        (bp - cp, br - cr)
    });
    let dp = derivative(&gp, Scheme::Spectral)?;
    let dr = derivative(&gr, Scheme::Spectral)?;
    Ok(dp.max_abs().max(dr.max_abs()))
}

/// `(p_e, ρ_e)`: `(∛2, √(2λ)/∛2)` for Chaplygin, `(1, 1)` for Born-Infeld
/// with `a = c = 1`.
pub fn equilibrium_values(m: &ModelParams) -> Result<(f64, f64)> {
    match *m {
        ModelParams::Chaplygin { lambda } => {
            let pe = 2f64.cbrt();
            Ok((pe, (2.0 * lambda).sqrt() / pe))
        }
        ModelParams::BornInfeld { a, c } if a == 1.0 && c == 1.0 => Ok((1.0, 1.0)),
        ModelParams::BornInfeld { a, c } => Err(Error::Unsupported(format!(
            "the Born-Infeld equilibrium is only located for a = c = 1 (got a = {a}, c = {c})"
        ))),
    }
}

pub fn named_equilibrium(m: &ModelParams, grid: &Grid) -> Result<State> {
    let (pe, re) = equilibrium_values(m)?;
    State::constant(grid, pe, re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chaplygin() -> ModelParams {
        ModelParams::chaplygin(0.5).unwrap()
    }

    fn born_infeld() -> ModelParams {
        ModelParams::born_infeld(1.0, 1.0).unwrap()
    }

    #[test]
    fn params_validate() {
        assert!(ModelParams::chaplygin(-1.0).is_err());
        assert!(ModelParams::chaplygin(0.0).is_err());
        assert!(ModelParams::chaplygin(f64::NAN).is_err());
        assert!(ModelParams::born_infeld(1.0, 0.0).is_err());
        assert!(ModelParams::born_infeld(-1.0, 1.0).is_err());
    }

    #[test]
    fn params_json_shape() {
        let v = serde_json::to_value(chaplygin()).unwrap();
        assert_eq!(v, serde_json::json!({"model": "chaplygin", "lambda": 0.5}));
        let v = serde_json::to_value(born_infeld()).unwrap();
        assert_eq!(v, serde_json::json!({"model": "born-infeld", "a": 1.0, "c": 1.0}));
        let back: ModelParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, born_infeld());
    }

    #[test]
    fn state_rejects_nonpositive_density_and_mixed_grids() {
        let g = Grid::new(16).unwrap();
        assert!(matches!(State::new(g.constant(1.0), g.constant(0.0), 0.0), Err(Error::Positivity { .. })));
        assert!(matches!(State::new(g.constant(1.0), g.constant(1e-11), 0.0), Err(Error::Positivity { .. })));
        let g2 = Grid::new(32).unwrap();
        assert!(matches!(State::new(g.constant(1.0), g2.constant(1.0), 0.0), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn rhs_rejects_nonpositive_density() {
        let g = Grid::new(16).unwrap();
        let s = State::from_raw(g.constant(1.0), g.field(|x| x.cos()), 0.0);
        assert!(matches!(rhs(&s, &chaplygin()), Err(Error::Positivity { .. })));
        assert!(matches!(flux(&s, &born_infeld()), Err(Error::Positivity { .. })));
    }

    #[test]
    fn chaplygin_equilibrium_is_steady() {
        let g = Grid::new(64).unwrap();
        let s = State::constant(&g, 2f64.cbrt(), 2f64.powf(-1.0 / 3.0)).unwrap();
        let (dp, dr) = rhs(&s, &chaplygin()).unwrap();
        assert!(dp.max_abs() < 1e-13 && dr.max_abs() < 1e-13);
    }

    #[test]
    fn born_infeld_manifold_profile_is_steady() {
        let g = Grid::new(128).unwrap();
        let p = g.field(|x| x.cos() + 2.0);
        let rho = p.map(|p| 1.0 / p);
        let s = State::new(p, rho, 0.0).unwrap();
        let (dp, dr) = rhs(&s, &born_infeld()).unwrap();
        assert!(dp.max_abs() < 1e-12 && dr.max_abs() < 1e-12);
    }

    #[test]
    fn chaplygin_tendencies_by_hand() {
        let g = Grid::new(64).unwrap();
        let s = State::new(g.field(|x| 2.0 + x.sin()), g.constant(1.0), 0.0).unwrap();
        let expect_r = g.field(|x| -x.cos());
        let expect_p = g.field(|x| -(2.0 + x.sin()) * x.cos());
        let (dp, dr) = rhs(&s, &chaplygin()).unwrap();
        assert!((&dr - &expect_r).max_abs() < 1e-12);
        assert!((&dp - &expect_p).max_abs() < 1e-12);
        let g = Grid::new(256).unwrap();
        let s = State::new(g.field(|x| 2.0 + x.sin()), g.constant(1.0), 0.0).unwrap();
        let (dp, dr) = rhs_with(&s, &chaplygin(), Scheme::Central4).unwrap();
        assert!((&dr - &g.field(|x| -x.cos())).max_abs() < 1e-6);
        assert!((&dp - &g.field(|x| -(2.0 + x.sin()) * x.cos())).max_abs() < 1e-6);
    }

    #[test]
    fn schemes_agree_within_truncation() {
        let g = Grid::new(128).unwrap();
        let s = State::new(g.field(|x| 1.5 + 0.3 * x.sin()), g.field(|x| 1.0 + 0.2 * (2.0 * x).cos()), 0.0).unwrap();
        for m in [chaplygin(), born_infeld()] {
            let (a, b) = rhs_with(&s, &m, Scheme::Spectral).unwrap();
            let (c, d) = rhs_with(&s, &m, Scheme::Central4).unwrap();
            let gap = (&a - &c).max_abs().max((&b - &d).max_abs());
            assert!(gap < 1e-4 && gap > 0.0, "{m:?}: gap = {gap:e}");
        }
    }

    #[test]
    fn fluxes_on_manifolds_and_by_arithmetic() {
        let g = Grid::new(32).unwrap();
        let p = g.field(|x| 2.0 + x.cos());
        let chap = State::new(p.clone(), p.map(|p| 1.0 / p), 0.0).unwrap();
        let (fp, fr) = flux(&chap, &chaplygin()).unwrap();
        assert!(fp.max_abs() < 1e-14);
        assert!((&fr - &g.constant(1.0)).max_abs() < 1e-14);
        let (fp, fr) = flux(&chap, &born_infeld()).unwrap();
        assert!((&fr - &g.constant(1.0)).max_abs() < 1e-14);
        assert!((&fp - &g.constant(1.0)).max_abs() < 1e-14);

        let s = State::constant(&g, 2.0, 1.0).unwrap();
        let (fp, fr) = flux(&s, &chaplygin()).unwrap();
        assert_eq!(fp.values()[0], 1.5);
        assert_eq!(fr.values()[0], 2.0);
    }

    #[test]
    fn density_values_and_partials() {
        let h = hamiltonian_density(&chaplygin());
        assert_eq!(h.density(1.0, 1.0), 1.0);
        let h = hamiltonian_density(&born_infeld());
        assert!((h.density(1.0, 1.0) - 2.0).abs() < 1e-15);
        assert!((h.d_dp(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((h.d_drho(1.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fluxes_are_hamiltonian_partials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [chaplygin(), born_infeld(), ModelParams::born_infeld(0.5, 4.0).unwrap()] {
            let h = hamiltonian_density(&m);
            for _ in 0..50 {
                let (p, r) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.1..3.0));
                let (fp, fr) = pointwise_flux(&m, p, r);
                assert!((fp - h.d_drho(p, r)).abs() < 1e-13 * fp.abs().max(1.0));
                assert!((fr - h.d_dp(p, r)).abs() < 1e-13 * fr.abs().max(1.0));
                if let ModelParams::BornInfeld { c, .. } = m {
                    let (shifted, _) = tendency_flux(&m, p, r);
                    assert!((shifted + c * c - fp).abs() < 1e-12 * fp.abs());
                }
            }
        }
    }

    #[test]
    fn limit_gap_vanishes_on_manifold() {
        let g = Grid::new(64).unwrap();
        let p = g.field(|x| 2.0 + x.cos());
        let s = State::new(p.clone(), p.map(|p| 1.0 / p), 0.0).unwrap();
        for c in [1.0, 10.0, 100.0] {
            assert!(chaplygin_limit_gap(&s, 1.0, c).unwrap() < 1e-12);
        }
    }

    #[test]
    fn limit_gap_scales_like_inverse_square() {
        let g = Grid::new(64).unwrap();
        let s = State::new(g.field(|x| 2.0 + x.sin()), g.constant(1.0), 0.0).unwrap();
        let g10 = chaplygin_limit_gap(&s, 1.0, 10.0).unwrap();
        let g100 = chaplygin_limit_gap(&s, 1.0, 100.0).unwrap();
        let g1000 = chaplygin_limit_gap(&s, 1.0, 1000.0).unwrap();
        let r = g10 / g100;
        assert!(r > 50.0 && r < 200.0, "ratio {r}");
        assert!(g1000 < 1e-5, "gap {g1000:e}");
        assert!(chaplygin_limit_gap(&s, 1.0, 0.5).is_err());
    }

    #[test]
    fn named_equilibria() {
        let g = Grid::new(16).unwrap();
        let s = named_equilibrium(&chaplygin(), &g).unwrap();
        assert!((s.p.values()[0] - 1.2599210).abs() < 1e-7);
        assert!((s.rho.values()[0] - 0.7937005).abs() < 1e-7);
        for lambda in [0.1, 0.5, 2.0, 7.3] {
            let (pe, re) = equilibrium_values(&ModelParams::chaplygin(lambda).unwrap()).unwrap();
            assert!((pe * re - (2.0 * lambda).sqrt()).abs() < 1e-14);
        }
        let s = named_equilibrium(&born_infeld(), &g).unwrap();
        assert_eq!((s.p.values()[0], s.rho.values()[0]), (1.0, 1.0));
        let other = ModelParams::born_infeld(2.0, 1.0).unwrap();
        assert!(matches!(named_equilibrium(&other, &g), Err(Error::Unsupported(_))));
    }
}
