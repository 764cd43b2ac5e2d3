//! Uniform periodic grid on `[0, 2π)` with differentiation and quadrature.
//!
//! Every field in the crate is sampled on a [`Grid`]. Two derivative
//! schemes are available: a Fourier pseudospectral derivative (the default)
//! and a fourth-order central difference used to cross-check results that
//! might depend on the discretization. Both are skew-adjoint with respect to
//! the rectangle-rule inner product, so periodic integration by parts holds
//! exactly up to rounding.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the periodic cell.
pub const CELL_LENGTH: f64 = 2.0 * PI;

/// Smallest admissible number of grid points.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Spectral,
    Central4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Spectral => f.write_str("spectral"),
            Scheme::Central4 => f.write_str("central4"),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "central4" => Ok(Scheme::Central4),
            other => {
                Err(Error::Parameter(format!("unknown derivative scheme `{other}` (expected spectral or central4)")))
            }
        }
    }
}

struct GridInner {
    n: usize,
    dx: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform grid `x_i = i·dx`, `dx = 2π/n`. Cheap to clone.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n()).field("dx", &self.dx()).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n() == other.n()
    }
}

impl Grid {
    /// `n` must be even and at least [`MIN_POINTS`].
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_POINTS {
            return Err(Error::InvalidGrid(format!("n = {n} is below the minimum of {MIN_POINTS}")));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("n = {n} must be even")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid { inner: Arc::new(GridInner { n, dx: CELL_LENGTH / n as f64, forward, inverse }) })
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn dx(&self) -> f64 {
        self.inner.dx
    }

    pub fn length(&self) -> f64 {
        CELL_LENGTH
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.inner.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n()).map(move |i| self.x(i))
    }

    /// Samples `f` at every grid point.
    pub fn field(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.clone(), values: self.points().map(f).collect() }
    }

    pub fn constant(&self, c: f64) -> Field {
        Field { grid: self.clone(), values: vec![c; self.n()] }
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    /// Integer wavenumber of FFT bin `j`; the Nyquist bin maps to zero so the
    /// spectral derivative of a real field stays real.
    fn wavenumber(&self, j: usize) -> f64 {
        let n = self.n();
        if j < n / 2 {
            j as f64
        } else if j == n / 2 {
            0.0
        } else {
            j as f64 - n as f64
        }
    }

    fn spectrum(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.inner.forward.process(&mut buf);
        buf
    }

    pub(crate) fn differentiate(&self, values: &[f64], scheme: Scheme) -> Vec<f64> {
        match scheme {
            Scheme::Spectral => self.spectral_derivative(values),
            Scheme::Central4 => self.central4_derivative(values),
        }
    }

    fn spectral_derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut buf = self.spectrum(values);
        let norm = 1.0 / n as f64;
        for (j, c) in buf.iter_mut().enumerate() {
            let k = self.wavenumber(j);
            *c = Complex::new(-k * c.im, k * c.re) * norm;
        }
        self.inner.inverse.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn central4_derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n();
        let scale = 1.0 / (12.0 * self.dx());
        (0..n)
            .map(|i| {
                let at = |o: isize| values[(i as isize + o).rem_euclid(n as isize) as usize];
                (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) * scale
            })
            .collect()
    }

    /// Fraction of spectral energy carried by wavenumbers `|k| >= n/3`.
    pub fn upper_third_energy_fraction(&self, values: &[f64]) -> f64 {
        let n = self.n();
        let spec = self.spectrum(values);
        let cutoff = n as f64 / 3.0;
        let mut total = 0.0;
        let mut tail = 0.0;
        for (j, c) in spec.iter().enumerate() {
            let e = c.norm_sqr();
            total += e;
            let k = if j <= n / 2 { j as f64 } else { (n - j) as f64 };
            if k >= cutoff {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }
}

/// Real samples of a periodic function on a [`Grid`].
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl Field {
    /// Checked constructor: the length must match the grid and all entries
    /// must be finite.
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values but the grid has {} points",
                values.len(),
                grid.n()
            )));
        }
        let field = Field { grid: grid.clone(), values };
        field.check_finite()?;
        Ok(field)
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Field { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index, value: self.values[index] }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    ///
    /// Panics if the grids differ.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.grid, other.grid, "zip_map on fields from different grids");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid.clone(), values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L²` norm `sqrt(∫ f² dx)`.
    pub fn l2_norm(&self) -> f64 {
        integrate(&self.map(|v| v * v)).sqrt()
    }

    /// CSV with header `x,value`, 17 significant digits per entry.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:.16e},{:.16e}\n", self.grid.x(i), v));
        }
        out
    }

    /// Parses the output of [`Field::to_csv_string`], rebuilding the grid
    /// from the number of rows.
    pub fn from_csv_str(text: &str) -> Result<Field> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x,value" => {}
            _ => return Err(Error::Parameter("field CSV must start with the header `x,value`".into())),
        }
        let mut values = Vec::new();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cell = line
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::Parameter(format!("field CSV row {row} has no value column")))?;
            let v: f64 = cell.trim().parse().map_err(|e| Error::Parameter(format!("field CSV row {row}: {e}")))?;
            values.push(v);
        }
        let grid = Grid::new(values.len())?;
        Field::new(&grid, values)
    }

    pub fn to_json_string(&self) -> String {
        crate::report::to_json_string(&self.values)
    }

    pub fn from_json_str(text: &str) -> Result<Field> {
        let values: Vec<f64> = serde_json::from_str(text)?;
        let grid = Grid::new(values.len())?;
        Field::new(&grid, values)
    }
}

impl Serialize for Field {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.map(|v| v * rhs)
    }
}

/// Discrete `∂f/∂x`. The spectral scheme is exact for trigonometric
/// polynomials of degree below `n/2`; central4 is fourth-order accurate.
pub fn derivative(f: &Field, scheme: Scheme) -> Result<Field> {
    f.check_finite()?;
    Ok(Field::from_raw(f.grid(), f.grid().differentiate(f.values(), scheme)))
}

/// Rectangle rule `dx·Σ f_i`, spectrally accurate for smooth periodic data.
pub fn integrate(f: &Field) -> f64 {
    f.grid().dx() * f.values().iter().sum::<f64>()
}

/// `∫ f·g dx` on the grid.
pub fn inner(f: &Field, g: &Field) -> f64 {
    assert_eq!(f.grid(), g.grid(), "inner product of fields from different grids");
    f.grid().dx() * f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>()
}
