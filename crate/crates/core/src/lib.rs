//! Chaplygin gas and Born-Infeld Hamiltonian systems on the periodic cell
//! `[0, 2π)`, with tools for energy-Casimir stability checks.
//!
//! The state is a momentum/density pair `(p, ρ)` evolved in conservation
//! form `∂t p = −∂x δH/δρ`, `∂t ρ = −∂x δH/δp`. Functionals are integrals of
//! local densities; their brackets, variational derivatives and second-order
//! remainders are computed on the grid.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod integrator;
pub mod models;
pub mod report;
pub mod solutions;
pub mod stability;

pub use error::{Error, Result};
pub use functionals::{LocalFunctional, QuadraticForm};
pub use grid::{Field, Grid, Scheme};
pub use integrator::{evolve, evolve_with, step_rk4, EvolveOptions, Trajectory};
pub use models::{ModelParams, State};
pub use solutions::ExactSolution;
pub use stability::{perturbation_experiment, ExperimentConfig, StabilityReport, Verdict};
