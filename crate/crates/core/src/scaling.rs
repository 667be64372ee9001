//! Variance scaling.
//!
//! For fixed squared errors `ε²` and uncertainties `σ²`, the NLL of `c · σ²`
//! is minimized at `C = mean(ε² / σ²)`. Minimizing NLL does not make the
//! measure calibrated, so [`relax_scale`] moves the factor by bisection
//! until the balance (mean signed coverage gap) is within a tolerance of
//! zero. Balance is non-decreasing in the scale factor, which is what makes
//! bisection valid.

use serde::{Deserialize, Serialize};

use crate::metrics::{self, check_lengths, floored, nll_from_squared};
use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const MAX_DOUBLINGS: u32 = 60;
pub const MAX_BISECTIONS: usize = 200;

/// NLL-optimal scale factor and the NLL before and after applying it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub factor: f64,
    pub nll_unscaled: f64,
    pub nll_scaled: f64,
}

/// Outcome of the balance-driven bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationResult {
    pub factor_relaxed: f64,
    pub iterations: usize,
    pub final_balance: f64,
    pub tolerance: f64,
}

/// Squared residuals, the per-sample NLL-minimizing variances.
pub fn ideal_uncertainty(targets: &[f64], predictions: &[f64]) -> Result<Vec<f64>> {
    if targets.len() != predictions.len() {
        return Err(Error::InputShape {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    Ok(targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).collect())
}

pub fn optimal_scale(squared_errors: &[f64], variances: &[f64]) -> Result<ScaleResult> {
    check_lengths(squared_errors.len(), variances.len())?;
    let n = squared_errors.len() as f64;
    let factor = squared_errors
        .iter()
        .zip(variances)
        .map(|(e2, v)| e2 / floored(*v))
        .sum::<f64>()
        / n;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Domain(format!(
            "optimal scale factor is {factor}; squared errors must not all be zero"
        )));
    }
    let nll = |scale| nll_from_squared(squared_errors.iter().copied(), variances.iter().copied(), scale).value;
    Ok(ScaleResult {
        factor,
        nll_unscaled: nll(1.0),
        nll_scaled: nll(factor),
    })
}

/// `factor · max(σ², VARIANCE_FLOOR)` for each variance.
pub fn apply_scale(variances: &[f64], factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Domain(format!("scale factor must be positive, got {factor}")));
    }
    Ok(variances.iter().map(|&v| factor * metrics::floored(v)).collect())
}

/// Targets, means and unscaled variances of one calibration set.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSet<'a> {
    pub targets: &'a [f64],
    pub means: &'a [f64],
    pub variances: &'a [f64],
    pub alpha_points: usize,
}

impl<'a> CalibrationSet<'a> {
    pub fn new(targets: &'a [f64], means: &'a [f64], variances: &'a [f64], alpha_points: usize) -> Result<Self> {
        check_lengths(targets.len(), means.len())?;
        check_lengths(targets.len(), variances.len())?;
        metrics::alpha_grid(alpha_points)?;
        Ok(Self {
            targets,
            means,
            variances,
            alpha_points,
        })
    }

    pub fn curve(&self, scale: f64) -> Result<metrics::CalibrationCurve> {
        metrics::calibration_curve_scaled(self.targets, self.means, self.variances, scale, self.alpha_points)
    }

    pub fn balance(&self, scale: f64) -> Result<f64> {
        self.curve(scale).map(|c| metrics::balance(&c))
    }

    pub fn miscalibration_area(&self, scale: f64) -> Result<f64> {
        self.curve(scale).map(|c| metrics::miscalibration_area(&c))
    }
}

/// Expands geometrically from `start` until the balance is negative below
/// and positive above.
pub fn bracket_scale(
    targets: &[f64],
    means: &[f64],
    variances: &[f64],
    start: f64,
    alpha_points: usize,
) -> Result<(f64, f64)> {
    let set = CalibrationSet::new(targets, means, variances, alpha_points)?;
    bracket(&set, start)
}

pub fn bracket(set: &CalibrationSet<'_>, start: f64) -> Result<(f64, f64)> {
    if !(start > 0.0 && start.is_finite()) {
        return Err(Error::Domain(format!("bracket start must be positive, got {start}")));
    }
    let mut low = start;
    let mut steps = 0;
    while set.balance(low)? >= 0.0 {
        if steps == MAX_DOUBLINGS {
            return Err(Error::NoBracket {
                sign: "non-negative",
                start,
                doublings: MAX_DOUBLINGS,
            });
        }
        low /= 2.0;
        steps += 1;
    }
    let mut high = start;
    steps = 0;
    while set.balance(high)? <= 0.0 {
        if steps == MAX_DOUBLINGS {
            return Err(Error::NoBracket {
                sign: "non-positive",
                start,
                doublings: MAX_DOUBLINGS,
            });
        }
        high *= 2.0;
        steps += 1;
    }
    Ok((low, high))
}

/// Bisects the scale factor inside `bracket` until `|balance| < tau`.
pub fn relax_scale(
    targets: &[f64],
    means: &[f64],
    variances: &[f64],
    bracket: (f64, f64),
    tau: f64,
    alpha_points: usize,
) -> Result<RelaxationResult> {
    let set = CalibrationSet::new(targets, means, variances, alpha_points)?;
    relax(&set, bracket, tau)
}

pub fn relax(set: &CalibrationSet<'_>, (mut low, mut high): (f64, f64), tau: f64) -> Result<RelaxationResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tau}")));
    }
    if !(low > 0.0 && high.is_finite()) {
        return Err(Error::Domain(format!("bracket ({low}, {high}) must be positive and finite")));
    }
    let (low_balance, high_balance) = (set.balance(low)?, set.balance(high)?);
    if !(low_balance < 0.0 && high_balance > 0.0) {
        return Err(Error::InvalidBracket {
            low_balance,
            high_balance,
        });
    }

    let mut iterations = 0;
    loop {
        let mid = 0.5 * (low + high);
        let b = set.balance(mid)?;
        iterations += 1;
        if b < 0.0 {
            low = mid;
        } else if b > 0.0 {
            high = mid;
        }
        if b.abs() < tau {
            return Ok(RelaxationResult {
                factor_relaxed: mid,
                iterations,
                final_balance: b,
                tolerance: tau,
            });
        }
        if iterations >= MAX_BISECTIONS {
            return Err(Error::NoConvergence {
                iterations,
                last_balance: b,
            });
        }
    }
}
