//! Numerical functional calculus for zeroth-order local functionals
//! `F(u) = ∫ f(p, ρ) dx`.
//!
//! For such densities the variational derivative is the pair of pointwise
//! partials `(f_p, f_ρ)`, which is what makes everything here cheap: the
//! Poisson bracket
//!
//! ```text
//! {F, G} = -∫ ( δF/δρ · ∂x δG/δp + δF/δp · ∂x δG/δρ ) dx
//! ```
//!
//! only needs one derivative per call. Second partials, when a functional
//! provides them, give the variational derivative of a bracket and hence the
//! Jacobi identity check.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, integrate, Field, Grid, Scheme};
use crate::models::{self, ModelParams, State};

type Pointwise = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type PointwiseHessian = Arc<dyn Fn(f64, f64) -> [f64; 3] + Send + Sync>;

/// A zeroth-order density `f(p, ρ)` with its exact partials.
///
/// The optional Hessian returns `[f_pp, f_pρ, f_ρρ]`.
#[derive(Clone)]
pub struct LocalFunctional {
    label: String,
    density: Pointwise,
    d_dp: Pointwise,
    d_drho: Pointwise,
    hessian: Option<PointwiseHessian>,
}

impl fmt::Debug for LocalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalFunctional").field("label", &self.label).field("hessian", &self.hessian.is_some()).finish()
    }
}

impl LocalFunctional {
    pub fn new(
        label: impl Into<String>,
        density: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_dp: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_drho: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LocalFunctional {
            label: label.into(),
            density: Arc::new(density),
            d_dp: Arc::new(d_dp),
            d_drho: Arc::new(d_drho),
            hessian: None,
        }
    }

    pub fn with_hessian(mut self, hessian: impl Fn(f64, f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn density(&self, p: f64, rho: f64) -> f64 {
        (self.density)(p, rho)
    }

    pub fn d_dp(&self, p: f64, rho: f64) -> f64 {
        (self.d_dp)(p, rho)
    }

    pub fn d_drho(&self, p: f64, rho: f64) -> f64 {
        (self.d_drho)(p, rho)
    }

    pub fn hessian(&self, p: f64, rho: f64) -> Option<[f64; 3]> {
        self.hessian.as_ref().map(|h| h(p, rho))
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    /// `F + G`, e.g. the extended Hamiltonian `H_C = H + C`.
    pub fn plus(&self, other: &LocalFunctional) -> LocalFunctional {
        let (f, g) = (self.clone(), other.clone());
        let (f1, g1) = (self.clone(), other.clone());
        let (f2, g2) = (self.clone(), other.clone());
        let mut sum = LocalFunctional::new(
            format!("{}+{}", self.label, other.label),
            move |p, r| f.density(p, r) + g.density(p, r),
            move |p, r| f1.d_dp(p, r) + g1.d_dp(p, r),
            move |p, r| f2.d_drho(p, r) + g2.d_drho(p, r),
        );
        if let (Some(hf), Some(hg)) = (self.hessian.clone(), other.hessian.clone()) {
            sum = sum.with_hessian(move |p, r| {
                let (a, b) = (hf(p, r), hg(p, r));
                [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
            });
        }
        sum
    }

    /// `s·F`.
    pub fn scaled(&self, s: f64) -> LocalFunctional {
        let (f, f1, f2) = (self.clone(), self.clone(), self.clone());
        let mut out = LocalFunctional::new(
            format!("{s}*{}", self.label),
            move |p, r| s * f.density(p, r),
            move |p, r| s * f1.d_dp(p, r),
            move |p, r| s * f2.d_drho(p, r),
        );
        if let Some(h) = self.hessian.clone() {
            out = out.with_hessian(move |p, r| {
                let v = h(p, r);
                [s * v[0], s * v[1], s * v[2]]
            });
        }
        out
    }

    /// `∫ ρ dx`.
    pub fn mass() -> Self {
        LocalFunctional::new("mass", |_, r| r, |_, _| 0.0, |_, _| 1.0).with_hessian(|_, _| [0.0; 3])
    }

    /// `∫ p dx`.
    pub fn total_momentum() -> Self {
        LocalFunctional::new("momentum", |p, _| p, |_, _| 1.0, |_, _| 0.0).with_hessian(|_, _| [0.0; 3])
    }

    /// Chaplygin Casimir `C = ∫ ρ/p dx`.
    pub fn chaplygin_casimir() -> Self {
        LocalFunctional::new("C_chaplygin", |p, r| r / p, |p, r| -r / (p * p), |p, _| 1.0 / p)
            .with_hessian(|p, r| [2.0 * r / (p * p * p), -1.0 / (p * p), 0.0])
    }

    /// Born-Infeld Casimir `C = -½ ∫ (1/ρ + ρ) dx`.
    pub fn born_infeld_casimir() -> Self {
        LocalFunctional::new(
            "C_born_infeld",
            |_, r| -0.5 * (1.0 / r + r),
            |_, _| 0.0,
            |_, r| 0.5 * (1.0 / (r * r) - 1.0),
        )
        .with_hessian(|_, r| [0.0, 0.0, -1.0 / (r * r * r)])
    }

    /// Polynomial density `Σ c[i][j] pⁱ ρʲ`, `i, j ∈ {0, 1, 2, 3}`.
    pub fn polynomial(coefficients: [[f64; 4]; 4]) -> Self {
        let c = coefficients;
        let pow = |x: f64, k: usize| x.powi(k as i32);
        let dpow = move |x: f64, k: usize| if k == 0 { 0.0 } else { k as f64 * pow(x, k - 1) };
        let ddpow = move |x: f64, k: usize| if k < 2 { 0.0 } else { (k * (k - 1)) as f64 * pow(x, k - 2) };
        let sum = move |f: &dyn Fn(usize, usize) -> f64| -> f64 {
            let mut s = 0.0;
            for (i, row) in c.iter().enumerate() {
                for (j, cij) in row.iter().enumerate() {
                    if *cij != 0.0 {
                        s += cij * f(i, j);
                    }
                }
            }
            s
        };
        LocalFunctional::new(
            "polynomial",
            move |p, r| sum(&|i, j| pow(p, i) * pow(r, j)),
            move |p, r| sum(&|i, j| dpow(p, i) * pow(r, j)),
            move |p, r| sum(&|i, j| pow(p, i) * dpow(r, j)),
        )
        .with_hessian(move |p, r| {
            [
                sum(&|i, j| ddpow(p, i) * pow(r, j)),
                sum(&|i, j| dpow(p, i) * dpow(r, j)),
                sum(&|i, j| pow(p, i) * ddpow(r, j)),
            ]
        })
    }
}

/// Which increment component a [`QuadraticForm`] consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormTarget {
    Momentum,
    Density,
    /// `∫ w (Δp² + Δρ²) dx`
    Pair,
}

/// `Q(Δu) = ∫ w(x) Δ² dx` with `Δ` selected by [`FormTarget`].
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub weight: Field,
    pub target: FormTarget,
}

impl QuadraticForm {
    pub fn new(weight: Field, target: FormTarget) -> Self {
        QuadraticForm { weight, target }
    }

    /// Plain `L²` form on the pair.
    pub fn l2(grid: &Grid) -> Self {
        QuadraticForm::new(grid.constant(1.0), FormTarget::Pair)
    }

    /// `Q₂(Δρ) = ∫ κ/(ρ_e β) (1/ρ_e + 1/β) Δρ² dx` with `κ = √(2λ)`.
    pub fn chaplygin_q2(grid: &Grid, rho_e: f64, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
        }
        if !(rho_e > 0.0) || !(lambda > 0.0) {
            return Err(Error::Parameter(format!("rho_e = {rho_e} and lambda = {lambda} must be positive")));
        }
        let kappa = (2.0 * lambda).sqrt();
        let w = kappa / (rho_e * beta) * (1.0 / rho_e + 1.0 / beta);
        Ok(QuadraticForm::new(grid.constant(w), FormTarget::Density))
    }

    /// Born-Infeld `Q₁(Δρ) = ∫ Δρ²/β dx`.
    pub fn born_infeld_q1(grid: &Grid, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
        }
        Ok(QuadraticForm::new(grid.constant(1.0 / beta), FormTarget::Density))
    }

    pub fn evaluate(&self, dp: &Field, drho: &Field) -> f64 {
        let w = &self.weight;
        match self.target {
            FormTarget::Momentum => integrate(&w.zip_map(dp, |w, d| w * d * d)),
            FormTarget::Density => integrate(&w.zip_map(drho, |w, d| w * d * d)),
            FormTarget::Pair => {
                let sq = dp.zip_map(drho, |a, b| a * a + b * b);
                integrate(&w.zip_map(&sq, |w, s| w * s))
            }
        }
    }

    /// Fails with the first index where the weight is not strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        match self.weight.values().iter().position(|w| !(*w > 0.0)) {
            Some(index) => Err(Error::NormDegenerate { index, weight: self.weight.values()[index] }),
            None => Ok(()),
        }
    }
}

fn pointwise(f: &Pointwise, s: &State, label: &str) -> Result<Field> {
    let values: Vec<f64> = s.p.values().iter().zip(s.rho.values()).map(|(&p, &r)| f(p, r)).collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation { label: label.to_string(), index, value: values[index] });
    }
    Ok(Field::from_raw(s.grid(), values))
}

/// `F(s) = ∫ f(p, ρ) dx`.
pub fn evaluate(f: &LocalFunctional, s: &State) -> Result<f64> {
    Ok(integrate(&pointwise(&f.density, s, &f.label)?))
}

/// `(δF/δp, δF/δρ)` at `s`.
pub fn variational_derivative(f: &LocalFunctional, s: &State) -> Result<(Field, Field)> {
    Ok((pointwise(&f.d_dp, s, &f.label)?, pointwise(&f.d_drho, s, &f.label)?))
}

/// `⟨δF(s), Δu⟩ = ∫ (δF/δp Δp + δF/δρ Δρ) dx`.
pub fn pairing(f: &LocalFunctional, s: &State, dp: &Field, drho: &Field) -> Result<f64> {
    let (fp, fr) = variational_derivative(f, s)?;
    Ok(inner(&fp, dp) + inner(&fr, drho))
}

fn bracket_from_derivatives(fp: &Field, fr: &Field, gp: &Field, gr: &Field, scheme: Scheme) -> Result<(f64, f64)> {
    let dgp = crate::grid::derivative(gp, scheme)?;
    let dgr = crate::grid::derivative(gr, scheme)?;
    let a = fr.zip_map(&dgp, |x, y| x * y);
    let b = fp.zip_map(&dgr, |x, y| x * y);
    let value = -(integrate(&a) + integrate(&b));
    let scale = integrate(&a.map(f64::abs)) + integrate(&b.map(f64::abs));
    Ok((value, scale))
}

/// `{F, G}(s)` with the spectral derivative.
pub fn poisson_bracket(f: &LocalFunctional, g: &LocalFunctional, s: &State) -> Result<f64> {
    poisson_bracket_with(f, g, s, Scheme::Spectral).map(|(v, _)| v)
}

/// `{F, G}(s)` together with its magnitude scale
/// `∫ |δF/δρ ∂x δG/δp| + |δF/δp ∂x δG/δρ| dx`.
pub fn poisson_bracket_with(f: &LocalFunctional, g: &LocalFunctional, s: &State, scheme: Scheme) -> Result<(f64, f64)> {
    let (fp, fr) = variational_derivative(f, s)?;
    let (gp, gr) = variational_derivative(g, s)?;
    bracket_from_derivatives(&fp, &fr, &gp, &gr, scheme)
}

fn hessian_fields(f: &LocalFunctional, s: &State) -> Result<[Field; 3]> {
    let h = f.hessian.as_ref().ok_or_else(|| Error::MissingHessian(f.label.clone()))?;
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (i, (&p, &r)) in s.p.values().iter().zip(s.rho.values()).enumerate() {
        let v = h(p, r);
        for (k, x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Evaluation { label: f.label.clone(), index: i, value: *x });
            }
            out[k].push(*x);
        }
    }
    let g = s.grid();
    let [a, b, c] = out;
    Ok([Field::from_raw(g, a), Field::from_raw(g, b), Field::from_raw(g, c)])
}

/// Variational derivative of the functional `u ↦ {F, G}(u)`.
///
/// The discrete bracket is `∇F·J∇G` with a constant skew matrix `J`, so the
/// gradient follows from the second partials of `F` and `G` alone.
pub fn bracket_variational_derivative(
    f: &LocalFunctional,
    g: &LocalFunctional,
    s: &State,
    scheme: Scheme,
) -> Result<(Field, Field)> {
    let d = |x: &Field| crate::grid::derivative(x, scheme);
    let (fp, fr) = variational_derivative(f, s)?;
    let (gp, gr) = variational_derivative(g, s)?;
    let [fpp, fpr, frr] = hessian_fields(f, s)?;
    let [gpp, gpr, grr] = hessian_fields(g, s)?;
    let (dfp, dfr, dgp, dgr) = (d(&fp)?, d(&fr)?, d(&gp)?, d(&gr)?);
    let n = s.grid().n();
    let mut wp = Vec::with_capacity(n);
    let mut wr = Vec::with_capacity(n);
    for i in 0..n {
        let (fpp, fpr, frr) = (fpp.values()[i], fpr.values()[i], frr.values()[i]);
        let (gpp, gpr, grr) = (gpp.values()[i], gpr.values()[i], grr.values()[i]);
        let (dfp, dfr, dgp, dgr) = (dfp.values()[i], dfr.values()[i], dgp.values()[i], dgr.values()[i]);
        wp.push(-(fpr * dgp - gpp * dfr + fpp * dgr - gpr * dfp));
        wr.push(-(frr * dgp - gpr * dfr + fpr * dgr - grr * dfp));
    }
    Ok((Field::from_raw(s.grid(), wp), Field::from_raw(s.grid(), wr)))
}

/// Jacobi cyclic sum `{{F,G},K} + {{G,K},F} + {{K,F},G}` and the sum of the
/// magnitudes of its terms. All three functionals need second partials.
pub fn jacobi_cyclic_sum(
    f: &LocalFunctional,
    g: &LocalFunctional,
    k: &LocalFunctional,
    s: &State,
    scheme: Scheme,
) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut scale = 0.0;
    for (a, b, c) in [(f, g, k), (g, k, f), (k, f, g)] {
        let (bp, br) = bracket_variational_derivative(a, b, s, scheme)?;
        let (cp, cr) = variational_derivative(c, s)?;
        let (v, sc) = bracket_from_derivatives(&bp, &br, &cp, &cr, scheme)?;
        total += v;
        scale += sc;
    }
    Ok((total, scale))
}

/// `|⟨δF(s), rhs(s)⟩ − {F, H}(s)|`: the defect between the model's
/// right-hand side and bracket dynamics.
///
/// The right-hand side goes through the model flux functions, the bracket
/// through the partials of the Hamiltonian density.
pub fn hamiltonian_vector_field_check(s: &State, m: &ModelParams, f: &LocalFunctional) -> Result<f64> {
    hamiltonian_vector_field_check_with(s, m, f, Scheme::Spectral)
}

pub fn hamiltonian_vector_field_check_with(
    s: &State,
    m: &ModelParams,
    f: &LocalFunctional,
    scheme: Scheme,
) -> Result<f64> {
    let (dp, drho) = models::rhs_with(s, m, scheme)?;
    let along_flow = pairing(f, s, &dp, &drho)?;
    let h = models::hamiltonian_density(m);
    let (bracket, _) = poisson_bracket_with(f, &h, s, scheme)?;
    Ok((along_flow - bracket).abs())
}

/// Second-order remainder `F(u) − F(u_e) − ⟨δF(u_e), u − u_e⟩`, accumulated
/// pointwise before integrating.
pub fn second_order_remainder(f: &LocalFunctional, u_e: &State, u: &State) -> Result<f64> {
    models::check_same_grid(u_e, u)?;
    let n = u.grid().n();
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let (pe, re) = (u_e.p.values()[i], u_e.rho.values()[i]);
        let (p, r) = (u.p.values()[i], u.rho.values()[i]);
        let v = f.density(p, r) - f.density(pe, re) - f.d_dp(pe, re) * (p - pe) - f.d_drho(pe, re) * (r - re);
        if !v.is_finite() {
            return Err(Error::Evaluation { label: f.label.clone(), index: i, value: v });
        }
        vals.push(v);
    }
    Ok(integrate(&Field::from_raw(u.grid(), vals)))
}

/// Tolerance for `max |pρ − κ|` when a manifold state is required.
pub const MANIFOLD_TOLERANCE: f64 = 1e-8;

fn require_manifold(s: &State, kappa: f64) -> Result<()> {
    let residual = s.constraint_residual(kappa);
    if residual > MANIFOLD_TOLERANCE {
        return Err(Error::OffManifold { kappa, residual });
    }
    Ok(())
}

/// Chaplygin `H(u) − H(u_e) − ⟨δH(u_e), Δu⟩` at the named equilibrium for a
/// state on `pρ = √(2λ)`; vanishes identically on the manifold.
pub fn q1_chaplygin_residual(s: &State, lambda: f64) -> Result<f64> {
    let m = ModelParams::chaplygin(lambda)?;
    require_manifold(s, m.kappa()?)?;
    let u_e = models::named_equilibrium(&m, s.grid())?;
    second_order_remainder(&models::hamiltonian_density(&m), &u_e, s)
}

/// `Q₂(Δρ)` for the Chaplygin gas.
pub fn q2_chaplygin(drho: &Field, rho_e: f64, beta: f64, lambda: f64) -> Result<f64> {
    let form = QuadraticForm::chaplygin_q2(drho.grid(), rho_e, beta, lambda)?;
    Ok(form.evaluate(drho, drho))
}

/// Closed-form Casimir expansion on `pρ = √(2λ)`,
/// `∫ κ/(ρ_e ρ) (1/ρ_e + 1/ρ) Δρ² dx`, the right-hand side `Q₂` is compared
/// against.
pub fn chaplygin_casimir_expansion_reduced(s: &State, rho_e: f64, lambda: f64) -> Result<f64> {
    let kappa = (2.0 * lambda).sqrt();
    require_manifold(s, kappa)?;
    let w = s.rho.map(|r| {
        let d = r - rho_e;
        kappa / (rho_e * r) * (1.0 / rho_e + 1.0 / r) * d * d
    });
    Ok(integrate(&w))
}

/// Born-Infeld `Q₁(Δρ) = ∫ Δρ²/β dx`.
pub fn q1_borninfeld(drho: &Field, beta: f64) -> Result<f64> {
    let form = QuadraticForm::born_infeld_q1(drho.grid(), beta)?;
    Ok(form.evaluate(drho, drho))
}

/// Born-Infeld energy excess on `pρ = 1` around `ρ_e = 1`, `∫ (ρ + 1/ρ − 2) dx`.
pub fn born_infeld_energy_expansion_reduced(s: &State) -> Result<f64> {
    require_manifold(s, 1.0)?;
    Ok(integrate(&s.rho.map(|r| r + 1.0 / r - 2.0)))
}

/// The same excess written as `∫ Δρ²/ρ dx`.
pub fn born_infeld_energy_expansion_quadratic(s: &State) -> Result<f64> {
    require_manifold(s, 1.0)?;
    Ok(integrate(&s.rho.map(|r| (r - 1.0) * (r - 1.0) / r)))
}

/// `√Q(Δu)`; the form's weight must be positive on its target.
pub fn energy_norm(dp: &Field, drho: &Field, form: &QuadraticForm) -> Result<f64> {
    form.check_positive()?;
    Ok(form.evaluate(dp, drho).max(0.0).sqrt())
}

/// Continuity constants: observed `max (expansion / ‖Δu‖²)` over the sample
/// family and the closed-form bound (`β²/α²` for Chaplygin, `β/γ` for
/// Born-Infeld), where `α = γ = inf ρ` and `β = sup ρ` over the samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityConstants {
    pub a_observed: f64,
    pub a_bound: f64,
    pub rho_inf: f64,
    pub rho_sup: f64,
}

impl ContinuityConstants {
    pub fn pair(&self) -> (f64, f64) {
        (self.a_observed, self.a_bound)
    }

    pub fn holds(&self) -> bool {
        self.a_observed <= self.a_bound * (1.0 + 1e-8)
    }
}

pub fn rho_bounds(samples: &[State]) -> (f64, f64) {
    samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.rho.min()), hi.max(s.rho.max())))
}

pub fn continuity_constants(m: &ModelParams, samples: &[State]) -> Result<ContinuityConstants> {
    if samples.is_empty() {
        return Err(Error::Parameter("continuity constants need at least one sample".into()));
    }
    let grid = samples[0].grid().clone();
    let u_e = models::named_equilibrium(m, &grid)?;
    let (inf, sup) = rho_bounds(samples);
    let rho_e = u_e.rho.values()[0];
    let mut a_observed: f64 = 0.0;
    let a_bound = match *m {
        ModelParams::Chaplygin { lambda } => {
            let form = QuadraticForm::chaplygin_q2(&grid, rho_e, sup, lambda)?;
            for s in samples {
                let drho = &s.rho - &u_e.rho;
                let q = form.evaluate(&drho, &drho);
                let expansion = chaplygin_casimir_expansion_reduced(s, rho_e, lambda)?;
                if q > 0.0 {
                    a_observed = a_observed.max(expansion / q);
                }
            }
            sup * sup / (inf * inf)
        }
        ModelParams::BornInfeld { .. } => {
            let form = QuadraticForm::born_infeld_q1(&grid, sup)?;
            for s in samples {
                let drho = &s.rho - &u_e.rho;
                let q = form.evaluate(&drho, &drho);
                let expansion = born_infeld_energy_expansion_reduced(s)?;
                if q > 0.0 {
                    a_observed = a_observed.max(expansion / q);
                }
            }
            sup / inf
        }
    };
    Ok(ContinuityConstants { a_observed, a_bound, rho_inf: inf, rho_sup: sup })
}
