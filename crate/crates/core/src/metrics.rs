//! Accuracy and uncertainty-quality metrics for regression.
//!
//! All functions are pure. Variances below [`VARIANCE_FLOOR`] are clamped
//! before any log, division or interval construction. A scale factor always
//! multiplies the clamped variance, so scaling and clamping commute with the
//! analytic optimal scale.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest variance used in likelihoods and intervals (squared standardized
/// target units).
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default number of interior coverage levels on the calibration grid.
pub const DEFAULT_ALPHA_POINTS: usize = 99;

pub(crate) fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InputShape { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::EmptyData("metric input is empty"));
    }
    Ok(())
}

#[inline]
pub(crate) fn floored(v: f64) -> f64 {
    // f64::max returns the floor for NaN.
    v.max(VARIANCE_FLOOR)
}

pub fn rmse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_lengths(targets.len(), predictions.len())?;
    let sse: f64 = targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((sse / targets.len() as f64).sqrt())
}

/// Gaussian negative log-likelihood without its constant term, plus the
/// number of variances that had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllOutcome {
    pub value: f64,
    pub clamped: usize,
}

/// Mean of `½ (y − ŷ)² / σ² + ½ log σ²`.
pub fn gaussian_nll(targets: &[f64], predictions: &[f64], variances: &[f64]) -> Result<f64> {
    gaussian_nll_detailed(targets, predictions, variances).map(|o| o.value)
}

pub fn gaussian_nll_detailed(targets: &[f64], predictions: &[f64], variances: &[f64]) -> Result<NllOutcome> {
    check_lengths(targets.len(), predictions.len())?;
    check_lengths(targets.len(), variances.len())?;
    let squared = targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p));
    Ok(nll_from_squared(squared, variances.iter().copied(), 1.0))
}

/// NLL given squared errors directly, with floored variances multiplied by `scale`.
pub(crate) fn nll_from_squared(
    squared_errors: impl Iterator<Item = f64>,
    variances: impl Iterator<Item = f64>,
    scale: f64,
) -> NllOutcome {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut clamped = 0usize;
    for (e2, v) in squared_errors.zip(variances) {
        if !(v >= VARIANCE_FLOOR) {
            clamped += 1;
        }
        let v = scale * floored(v);
        total += 0.5 * e2 / v + 0.5 * v.ln();
        n += 1;
    }
    NllOutcome {
        value: total / n as f64,
        clamped,
    }
}

/// Half-width multiplier `z` such that a standard normal falls in `[-z, z]`
/// with probability `alpha`.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain(format!("coverage level must lie in [0, 1), got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    Ok(std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(alpha))
}

/// Fraction of instances with `|y − μ| ≤ z_α · σ`.
pub fn observed_frequency(targets: &[f64], means: &[f64], variances: &[f64], alpha: f64) -> Result<f64> {
    check_lengths(targets.len(), means.len())?;
    check_lengths(targets.len(), variances.len())?;
    let z = z_quantile(alpha)?;
    Ok(inside_fraction(targets, means, variances, 1.0, z))
}

#[inline]
fn inside_fraction(targets: &[f64], means: &[f64], variances: &[f64], scale: f64, z: f64) -> f64 {
    let inside = targets
        .iter()
        .zip(means)
        .zip(variances)
        .filter(|((y, m), v)| (*y - *m).abs() <= z * (scale * floored(**v)).sqrt())
        .count();
    inside as f64 / targets.len() as f64
}

/// Observed coverage at each expected coverage level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    alphas: Vec<f64>,
    observed: Vec<f64>,
}

impl CalibrationCurve {
    pub fn new(alphas: Vec<f64>, observed: Vec<f64>) -> Result<Self> {
        if alphas.len() != observed.len() {
            return Err(Error::InputShape {
                expected: alphas.len(),
                got: observed.len(),
            });
        }
        if alphas.is_empty() {
            return Err(Error::EmptyData("calibration curve has no points"));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("alphas must be strictly increasing within (0, 1)".into()));
        }
        if observed.iter().any(|p| !(0.0..=1.0).contains(p)) || observed.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("observed frequencies must be non-decreasing within [0, 1]".into()));
        }
        Ok(Self { alphas, observed })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.observed.iter().zip(&self.alphas).map(|(p, a)| p - a)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let doc = |e: csv::Error| Error::Document(e.to_string());
        csv.write_record(["alpha", "observed"]).map_err(doc)?;
        for (a, p) in self.alphas.iter().zip(&self.observed) {
            csv.write_record([a.to_string(), p.to_string()]).map_err(doc)?;
        }
        csv.flush().map_err(|e| Error::Document(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers().map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != ["alpha", "observed"] {
            return Err(Error::Parse {
                row: 1,
                message: "expected header alpha,observed".into(),
            });
        }
        let (mut alphas, mut observed) = (Vec::new(), Vec::new());
        for (i, record) in csv.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            let num = |k: usize| -> Result<f64> {
                record.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                    row,
                    message: format!("column {} is not a number", k + 1),
                })
            };
            alphas.push(num(0)?);
            observed.push(num(1)?);
        }
        Self::new(alphas, observed)
    }
}

/// Interior grid `m / (M + 1)`, `m = 1..=M`.
pub fn alpha_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 alpha points, got {points}")));
    }
    Ok((1..=points).map(|m| m as f64 / (points + 1) as f64).collect())
}

pub fn calibration_curve(
    targets: &[f64],
    means: &[f64],
    variances: &[f64],
    points: usize,
) -> Result<CalibrationCurve> {
    calibration_curve_scaled(targets, means, variances, 1.0, points)
}

/// Calibration curve of the scaled uncertainty `scale · σ²`.
pub fn calibration_curve_scaled(
    targets: &[f64],
    means: &[f64],
    variances: &[f64],
    scale: f64,
    points: usize,
) -> Result<CalibrationCurve> {
    check_lengths(targets.len(), means.len())?;
    check_lengths(targets.len(), variances.len())?;
    let alphas = alpha_grid(points)?;
    let observed = alphas
        .iter()
        .map(|&a| z_quantile(a).map(|z| inside_fraction(targets, means, variances, scale, z)))
        .collect::<Result<Vec<_>>>()?;
    CalibrationCurve::new(alphas, observed)
}

/// Mean absolute gap between observed and expected coverage.
pub fn miscalibration_area(curve: &CalibrationCurve) -> f64 {
    curve.gaps().map(f64::abs).sum::<f64>() / curve.len() as f64
}

/// Mean signed gap between observed and expected coverage. Positive means
/// under-confident on average, negative over-confident.
pub fn balance(curve: &CalibrationCurve) -> f64 {
    curve.gaps().sum::<f64>() / curve.len() as f64
}

/// The metrics summary document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rmse: f64,
    pub nll: f64,
    pub ma: f64,
    pub balance: f64,
}

impl MetricsSummary {
    pub fn compute(targets: &[f64], means: &[f64], variances: &[f64], points: usize) -> Result<Self> {
        let curve = calibration_curve(targets, means, variances, points)?;
        Ok(Self {
            rmse: rmse(targets, means)?,
            nll: gaussian_nll(targets, means, variances)?,
            ma: miscalibration_area(&curve),
            balance: balance(&curve),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyData(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::InputShape { .. })));
    }

    #[test]
    fn rmse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += (y[i] - p[i]).powi(2);
        }
        let want = (acc / 100.0).sqrt();
        assert!((rmse(&y, &p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        assert_eq!(gaussian_nll(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(gaussian_nll(&[1.0], &[0.0], &[1.0]).unwrap(), 0.5);
        let at_optimum = gaussian_nll(&[2.0], &[0.0], &[4.0]).unwrap();
        assert!((at_optimum - (0.5 + 0.5 * 4f64.ln())).abs() < 1e-15);
        assert!((at_optimum - 1.1931).abs() < 1e-4);
    }

    #[test]
    fn nll_clamps_tiny_variances() {
        let out = gaussian_nll_detailed(&[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0], &[0.0, -3.0, 1.0]).unwrap();
        assert_eq!(out.clamped, 2);
        assert!(out.value.is_finite());
        let floor_term = 0.5 * VARIANCE_FLOOR.ln();
        assert!((out.value - (2.0 * floor_term + 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn z_quantile_examples() {
        assert_eq!(z_quantile(0.0).unwrap(), 0.0);
        assert!((z_quantile(0.95).unwrap() - 1.959_963_984_540_054).abs() < 1e-7);
        assert!((z_quantile(0.6827).unwrap() - 1.0).abs() < 1e-4);
        assert!(matches!(z_quantile(1.0), Err(Error::Domain(_))));
        assert!(z_quantile(-0.1).is_err());
    }

    #[test]
    fn zero_residuals_are_always_inside() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(observed_frequency(&y, &y, &[0.5, 0.1, 2.0], 0.3).unwrap(), 1.0);
        let curve = calibration_curve(&y, &y, &[0.5, 0.1, 2.0], 9).unwrap();
        assert!(curve.observed().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn zero_alpha_counts_only_ties() {
        assert_eq!(observed_frequency(&[1.0, 2.0], &[1.5, 2.5], &[1.0, 1.0], 0.0).unwrap(), 0.0);
        assert_eq!(observed_frequency(&[1.0, 2.0], &[1.0, 2.5], &[1.0, 1.0], 0.0).unwrap(), 0.5);
    }

    fn calibrated_sample(n: usize, variance_factor: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut var = Vec::with_capacity(n);
        for _ in 0..n {
            let m: f64 = rng.random_range(-2.0..2.0);
            let v: f64 = rng.random_range(0.05..2.0);
            let noise = Normal::new(0.0, (v * variance_factor).sqrt()).unwrap();
            y.push(m + noise.sample(&mut rng));
            mu.push(m);
            var.push(v);
        }
        (y, mu, var)
    }

    #[test]
    fn coverage_of_calibrated_gaussians() {
        let (y, mu, var) = calibrated_sample(10_000, 1.0, 17);
        let p = observed_frequency(&y, &mu, &var, 0.9).unwrap();
        assert!((0.88..=0.92).contains(&p), "{p}");
        let curve = calibration_curve(&y, &mu, &var, 99).unwrap();
        let worst = curve.gaps().map(f64::abs).fold(0.0, f64::max);
        assert!(worst < 0.03, "{worst}");
    }

    #[test]
    fn area_and_balance_examples() {
        let alphas = alpha_grid(99).unwrap();
        let perfect = CalibrationCurve::new(alphas.clone(), alphas.clone()).unwrap();
        assert_eq!(miscalibration_area(&perfect), 0.0);
        assert_eq!(balance(&perfect), 0.0);

        // (1/99) * sum_{m=1}^{99} (1 - m/100) = (99 - 49.5) / 99 = 0.5 exactly.
        let ones = CalibrationCurve::new(alphas.clone(), vec![1.0; 99]).unwrap();
        assert!((miscalibration_area(&ones) - 0.5).abs() < 1e-12);
        assert!((balance(&ones) - 0.5).abs() < 1e-12);

        let zeros = CalibrationCurve::new(alphas, vec![0.0; 99]).unwrap();
        assert!((balance(&zeros) + 0.5).abs() < 1e-12);
        assert!((miscalibration_area(&zeros) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn area_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alphas = alpha_grid(40).unwrap();
        let mut observed: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        observed.sort_by(f64::total_cmp);
        let curve = CalibrationCurve::new(alphas.clone(), observed.clone()).unwrap();
        let mut acc = 0.0;
        for m in 0..40 {
            acc += (observed[m] - alphas[m]).abs();
        }
        assert!((miscalibration_area(&curve) - acc / 40.0).abs() < 1e-12);
    }

    #[test]
    fn curve_invariants_are_enforced() {
        assert!(CalibrationCurve::new(vec![0.5, 0.4], vec![0.1, 0.2]).is_err());
        assert!(CalibrationCurve::new(vec![0.0, 0.4], vec![0.1, 0.2]).is_err());
        assert!(CalibrationCurve::new(vec![0.2, 0.4], vec![0.3, 0.2]).is_err());
        assert!(CalibrationCurve::new(vec![0.2, 0.4], vec![0.3]).is_err());
        assert!(alpha_grid(1).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let (y, mu, var) = calibrated_sample(200, 2.0, 3);
        let curve = calibration_curve(&y, &mu, &var, 19).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(CalibrationCurve::read_csv(buf.as_slice()).unwrap(), curve);
    }

    /// Per-sample NLL as a function of the variance, for residual `r`.
    fn per_sample(r: f64, v: f64) -> f64 {
        gaussian_nll(&[r], &[0.0], &[v]).unwrap()
    }

    #[test]
    fn per_sample_nll_is_unimodal_around_squared_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let r: f64 = rng.random_range(0.05..4.0);
            let e2 = r * r;
            let grid: Vec<f64> = (1..200).map(|k| e2 * k as f64 / 100.0).collect();
            for w in grid.windows(2) {
                let (a, b) = (per_sample(r, w[0]), per_sample(r, w[1]));
                if w[1] <= e2 {
                    assert!(b < a, "not decreasing below the optimum");
                } else if w[0] >= e2 {
                    assert!(b > a, "not increasing above the optimum");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn ideal_variance_beats_any_other(
            residuals in prop::collection::vec(0.01f64..5.0, 1..30),
            seed in any::<u64>(),
        ) {
            let y: Vec<f64> = residuals.clone();
            let p = vec![0.0; y.len()];
            let ideal: Vec<f64> = residuals.iter().map(|r| r * r).collect();
            let best = gaussian_nll(&y, &p, &ideal).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let v: Vec<f64> = (0..y.len()).map(|_| rng.random_range(1e-3..30.0)).collect();
                prop_assert!(best <= gaussian_nll(&y, &p, &v).unwrap() + 1e-12);
            }
        }

        #[test]
        fn observed_frequency_is_monotone_in_alpha(
            rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..4.0), 1..60),
            a in 0.0f64..0.999,
            b in 0.0f64..0.999,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let mu: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let var: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                observed_frequency(&y, &mu, &var, lo).unwrap()
                    <= observed_frequency(&y, &mu, &var, hi).unwrap()
            );
            let curve = calibration_curve(&y, &mu, &var, 25).unwrap();
            let ma = miscalibration_area(&curve);
            let bal = balance(&curve);
            prop_assert!(ma >= bal.abs() - 1e-15);
            prop_assert!((0.0..=1.0).contains(&ma));
            prop_assert!((-1.0..=1.0).contains(&bal));
        }
    }
}
