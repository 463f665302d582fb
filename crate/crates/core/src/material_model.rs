//! Exponential hardening law
//!
//! ```text
//! R(eps, p) = g1/b1 (1 - exp(-b1 eps)) + g2/b2 (1 - exp(-b2 eps))
//! ```
//!
//! with `p = (g1, g2, b1, b2)`, its analytic parameter derivatives and the
//! swap `(g1, b1) <-> (g2, b2)` under which `R` is invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|beta * eps|` each term is evaluated from its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// Parameter vector `(gamma1, gamma2, beta1, beta2)` of the hardening law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct MaterialParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl MaterialParams {
    pub const fn new(gamma1: f64, gamma2: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            beta1,
            beta2,
        }
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.gamma1, self.gamma2, self.beta1, self.beta2]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_positive(&self) -> bool {
        self.to_array().iter().all(|&v| v > 0.0 && v.is_finite())
    }

    /// Componentwise absolute value.
    pub fn abs(self) -> Self {
        Self::from_array(self.to_array().map(f64::abs))
    }

    /// Swaps the two exponential terms. `R` is invariant under this map.
    pub fn permute(self) -> Self {
        permute(self)
    }
}

impl From<[f64; 4]> for MaterialParams {
    fn from(a: [f64; 4]) -> Self {
        Self::from_array(a)
    }
}

impl From<MaterialParams> for [f64; 4] {
    fn from(p: MaterialParams) -> Self {
        p.to_array()
    }
}

/// Equally spaced strain points `eps_start, ..., eps_end` (`count` of them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct StrainGrid {
    eps_start: f64,
    eps_end: f64,
    count: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    eps_start: f64,
    eps_end: f64,
    count: usize,
}

impl TryFrom<RawGrid> for StrainGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        StrainGrid::new(raw.eps_start, raw.eps_end, raw.count)
    }
}

impl Default for StrainGrid {
    fn default() -> Self {
        Self {
            eps_start: 0.0,
            eps_end: 0.1,
            count: 20,
        }
    }
}

impl StrainGrid {
    pub fn new(eps_start: f64, eps_end: f64, count: usize) -> Result<Self> {
        if !(eps_start.is_finite() && eps_end.is_finite()) || eps_start >= eps_end {
            return Err(Error::InvalidArgument(format!(
                "strain grid needs finite eps_start < eps_end, got [{eps_start}, {eps_end}]"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "strain grid needs at least 2 points, got {count}"
            )));
        }
        Ok(Self {
            eps_start,
            eps_end,
            count,
        })
    }

    pub fn eps_start(&self) -> f64 {
        self.eps_start
    }

    pub fn eps_end(&self) -> f64 {
        self.eps_end
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> f64 {
        self.eps_end - self.eps_start
    }

    /// The `i`-th strain point; the last one is exactly `eps_end`.
    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.eps_end
        } else {
            self.eps_start + self.width() * (i as f64) / ((self.count - 1) as f64)
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.point(i))
    }
}

impl std::fmt::Display for StrainGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}] x {}", self.eps_start, self.eps_end, self.count)
    }
}

/// Hardening stresses sampled on a strain grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StressCurve {
    pub values: Vec<f64>,
    pub grid: StrainGrid,
}

impl StressCurve {
    pub fn new(values: Vec<f64>, grid: StrainGrid) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::Shape(format!(
                "curve has {} values but grid has {} points",
                values.len(),
                grid.count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("curve value {i} is not finite")));
        }
        Ok(Self { values, grid })
    }
}

/// Fourth-order Taylor expansion of `(1 - exp(-x)) / x` about zero.
#[inline]
fn relaxation_series(x: f64) -> f64 {
    1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0 * (1.0 - x / 5.0)))
}

/// Taylor expansion of the derivative of `(1 - exp(-x)) / x`.
#[inline]
fn relaxation_slope_series(x: f64) -> f64 {
    -0.5 + x / 3.0 - x * x / 8.0 + x * x * x / 30.0
}

/// `(1 - exp(-x)) / x`, continuous through `x = 0`.
#[inline]
fn relaxation(x: f64) -> f64 {
    if x.abs() < SERIES_THRESHOLD {
        relaxation_series(x)
    } else {
        -(-x).exp_m1() / x
    }
}

/// Derivative of [`relaxation`] with respect to `x`.
#[inline]
fn relaxation_slope(x: f64) -> f64 {
    if x.abs() < SERIES_THRESHOLD {
        relaxation_slope_series(x)
    } else {
        (x * (-x).exp() + (-x).exp_m1()) / (x * x)
    }
}

/// One term `gamma/beta (1 - exp(-beta eps))` of the law.
#[inline]
fn term(eps: f64, gamma: f64, beta: f64) -> f64 {
    let x = beta * eps;
    if x.abs() < SERIES_THRESHOLD {
        gamma * eps * relaxation_series(x)
    } else {
        // Written without the division by `x` so that the saturated tail
        // stays exactly flat instead of jittering by an ulp.
        gamma / beta * -(-x).exp_m1()
    }
}

/// Hardening stress `R(eps, p)`.
pub fn hardening_stress(eps: f64, p: &MaterialParams) -> f64 {
    term(eps, p.gamma1, p.beta1) + term(eps, p.gamma2, p.beta2)
}

/// `(dR/dgamma1, dR/dgamma2, dR/dbeta1, dR/dbeta2)` at `(eps, p)`.
pub fn grad_params(eps: f64, p: &MaterialParams) -> [f64; 4] {
    let x1 = p.beta1 * eps;
    let x2 = p.beta2 * eps;
    let eps2 = eps * eps;
    [
        eps * relaxation(x1),
        eps * relaxation(x2),
        p.gamma1 * eps2 * relaxation_slope(x1),
        p.gamma2 * eps2 * relaxation_slope(x2),
    ]
}

/// Stress and its parameter gradient in one pass.
pub fn stress_and_grad(eps: f64, p: &MaterialParams) -> (f64, [f64; 4]) {
    let x1 = p.beta1 * eps;
    let x2 = p.beta2 * eps;
    let r1 = relaxation(x1);
    let r2 = relaxation(x2);
    let eps2 = eps * eps;
    let value = term(eps, p.gamma1, p.beta1) + term(eps, p.gamma2, p.beta2);
    let grad = [
        eps * r1,
        eps * r2,
        p.gamma1 * eps2 * relaxation_slope(x1),
        p.gamma2 * eps2 * relaxation_slope(x2),
    ];
    (value, grad)
}

pub fn permute(p: MaterialParams) -> MaterialParams {
    MaterialParams::new(p.gamma2, p.gamma1, p.beta2, p.beta1)
}

pub fn evaluate_curve(grid: &StrainGrid, p: &MaterialParams) -> StressCurve {
    StressCurve {
        values: grid.points().map(|eps| hardening_stress(eps, p)).collect(),
        grid: *grid,
    }
}
