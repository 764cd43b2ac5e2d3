//! Closed-form steady profiles `p = cos x + 2`, `ρ = κ/(cos x + 2)` and
//! their analytic functional values, used as ground truth.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::Result;
use crate::grid::{Grid, Scheme};
use crate::models::{self, ModelParams, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub model: ModelParams,
    kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValues {
    pub hamiltonian: f64,
    pub casimir: f64,
    pub rho_inf: f64,
    pub rho_sup: f64,
}

impl ExactSolution {
    pub fn chaplygin(lambda: f64) -> Result<Self> {
        let model = ModelParams::chaplygin(lambda)?;
        Ok(ExactSolution { model, kappa: (2.0 * lambda).sqrt() })
    }

    /// The `a = c = 1` Born-Infeld profile.
    pub fn born_infeld() -> Self {
        ExactSolution { model: ModelParams::BornInfeld { a: 1.0, c: 1.0 }, kappa: 1.0 }
    }

    pub fn for_model(m: &ModelParams) -> Result<Self> {
        let kappa = m.kappa()?;
        Ok(ExactSolution { model: *m, kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn momentum(&self, x: f64) -> f64 {
        x.cos() + 2.0
    }

    pub fn density(&self, x: f64) -> f64 {
        self.kappa / (x.cos() + 2.0)
    }

    /// Velocity potential `sin x + 2x − t`; not evolved.
    pub fn potential(&self, x: f64, t: f64) -> f64 {
        x.sin() + 2.0 * x - t
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.kappa / 3.0, self.kappa)
    }

    /// The profile at time `t`; `(p, ρ)` do not depend on `t`.
    pub fn sample(&self, t: f64, grid: &Grid) -> State {
        let p = grid.field(|x| self.momentum(x));
        let rho = grid.field(|x| self.density(x));
        State::new(p, rho, t).expect("closed-form profile is positive and finite")
    }

    /// `max |rhs|` at the sampled profile.
    pub fn residual(&self, grid: &Grid, scheme: Scheme) -> Result<f64> {
        let (dp, dr) = models::rhs_with(&self.sample(0.0, grid), &self.model, scheme)?;
        Ok(dp.max_abs().max(dr.max_abs()))
    }

    /// Residual of the equations expanded with the product rule,
    /// `∂t ρ = −(p ∂x ρ + ρ ∂x p)` and the matching `p` equation. Unlike the
    /// conservative residual, derivative errors do not cancel pointwise, so
    /// it measures the spatial discretization error.
    pub fn expanded_residual(&self, grid: &Grid, scheme: Scheme) -> Result<f64> {
        let s = self.sample(0.0, grid);
        let dp = crate::grid::derivative(&s.p, scheme)?;
        let dr = crate::grid::derivative(&s.rho, scheme)?;
        let h = models::hamiltonian_density(&self.model);
        let mut worst: f64 = 0.0;
        for i in 0..grid.n() {
            let (p, r) = (s.p.values()[i], s.rho.values()[i]);
            let [hpp, hpr, hrr] = h.hessian(p, r).expect("model densities carry second partials");
            // F_ρ = h_p, F_p = h_ρ
            let t_rho = hpp * dp.values()[i] + hpr * dr.values()[i];
            let t_p = hpr * dp.values()[i] + hrr * dr.values()[i];
            worst = worst.max(t_rho.abs()).max(t_p.abs());
        }
        Ok(worst)
    }

    pub fn oracle_values(&self) -> OracleValues {
        let inv_mean = 2.0 * PI / 3f64.sqrt(); // ∫ dx/(2+cos x)
        let inv_sq = 4.0 * PI / 3f64.powf(1.5); // ∫ dx/(2+cos x)²
        let (hamiltonian, casimir) = match self.model {
            // on pρ = κ the density reduces to κ p
            ModelParams::Chaplygin { .. } => (self.kappa * 4.0 * PI, self.kappa * inv_sq),
            // √(ρ²+1)√(1+p²) = ρ + 1/ρ when pρ = 1
            ModelParams::BornInfeld { .. } => {
                let h = inv_mean + 4.0 * PI;
                (h, -0.5 * h)
            }
        };
        let (rho_inf, rho_sup) = self.bounds();
        OracleValues { hamiltonian, casimir, rho_inf, rho_sup }
    }
}
