//! Dropout-rate selection on a validation set.
//!
//! Every grid rate gets its own Monte Carlo run (seeded from the sweep seed
//! and the rate), and the resulting row records accuracy, NLL with and
//! without the optimal scale factor, miscalibration, and the NLL of the
//! ideal per-sample uncertainty. The unscaled objective picks the rate with
//! the lowest raw NLL; the scale-aware objective picks the rate with the
//! lowest NLL after applying that rate's own optimal factor.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dropout::{validate_rate, DropoutConfig};
use crate::mc::{mc_predict, McEstimate, DEFAULT_PASSES};
use crate::metrics::{self, DEFAULT_ALPHA_POINTS};
use crate::nn::{train, MlpModel, TrainConfig};
use crate::scaling::{self, CalibrationSet, RelaxationResult, DEFAULT_TOLERANCE};
use crate::{rng, Error, Result};

/// Largest number of rates a spaced grid may hold.
pub const MAX_GRID_POINTS: usize = 10_000;

/// Strictly increasing dropout rates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RateGrid {
    rates: Vec<f64>,
}

impl RateGrid {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidConfig("rate grid is empty".into()));
        }
        for &r in &rates {
            validate_rate(r)?;
        }
        if let Some(w) = rates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "rate grid must be strictly increasing without duplicates ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { rates })
    }

    /// `count` rates from `min` to `max`, evenly spaced in log space.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0) {
            return Err(Error::InvalidConfig("log-spaced grid needs a positive minimum".into()));
        }
        Self::spaced(min, max, count, |a, b, t| (a.ln() + t * (b.ln() - a.ln())).exp())
    }

    pub fn linear(min: f64, max: f64, count: usize) -> Result<Self> {
        Self::spaced(min, max, count, |a, b, t| a + t * (b - a))
    }

    fn spaced(min: f64, max: f64, count: usize, at: impl Fn(f64, f64, f64) -> f64) -> Result<Self> {
        if count == 0 || count > MAX_GRID_POINTS {
            return Err(Error::InvalidConfig(format!(
                "rate grid needs between 1 and {MAX_GRID_POINTS} points, got {count}"
            )));
        }
        if count == 1 {
            return Self::new(vec![min]);
        }
        if !(min < max) {
            return Err(Error::InvalidConfig(format!("grid minimum {min} must be below maximum {max}")));
        }
        let last = (count - 1) as f64;
        let rates = (0..count)
            .map(|i| match i {
                0 => min,
                i if i == count - 1 => max,
                i => at(min, max, i as f64 / last),
            })
            .collect();
        Self::new(rates)
    }

    /// Parses `min,max,count,log|lin`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let [min, max, count, kind] = parts.as_slice() else {
            return Err(Error::InvalidConfig(format!(
                "rate grid must look like min,max,count,log|lin; got {spec:?}"
            )));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("rate grid bound {s:?} is not a number")))
        };
        let (min, max) = (num(min)?, num(max)?);
        let count: usize = count
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("rate grid count {count:?} is not a positive integer")))?;
        match *kind {
            "log" => Self::log_spaced(min, max, count),
            "lin" => Self::linear(min, max, count),
            other => Err(Error::InvalidConfig(format!("rate grid spacing must be log or lin, got {other:?}"))),
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn contains(&self, rate: f64) -> bool {
        self.rates.contains(&rate)
    }
}

impl Default for RateGrid {
    /// 15 log-spaced rates in `[0.001, 0.5]`.
    fn default() -> Self {
        Self::log_spaced(0.001, 0.5, 15).expect("default grid is valid")
    }
}

impl TryFrom<Vec<f64>> for RateGrid {
    type Error = Error;

    fn try_from(rates: Vec<f64>) -> Result<Self> {
        Self::new(rates)
    }
}

impl From<RateGrid> for Vec<f64> {
    fn from(grid: RateGrid) -> Self {
        grid.rates
    }
}

/// Monte Carlo and calibration settings shared by every rate of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub passes: usize,
    pub seed: u64,
    pub alpha_points: usize,
    pub tau: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            passes: DEFAULT_PASSES,
            seed: 0,
            alpha_points: DEFAULT_ALPHA_POINTS,
            tau: DEFAULT_TOLERANCE,
        }
    }
}

/// Seed of the Monte Carlo run for one rate.
pub fn rate_seed(seed: u64, rate: f64) -> u64 {
    rng::mix(seed, rate.to_bits())
}

/// Validation metrics at one dropout rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub rmse: f64,
    pub nll_unscaled: f64,
    pub nll_scaled: f64,
    pub scale_factor: f64,
    pub ma_unscaled: f64,
    pub ma_scaled: f64,
    pub nll_ideal: f64,
    /// Seed the model behind this row was trained with (embedded rows only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_seed: Option<u64>,
}

/// Rates chosen by the two objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rate_unscaled: f64,
    pub rate_scaled: f64,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSweep {
    pub rows: Vec<SweepRow>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub injected: MethodSweep,
    pub embedded: Option<MethodSweep>,
    /// Relaxed scale factor at the injected scale-aware choice.
    pub relaxation: Option<RelaxationResult>,
    /// Why the relaxation is missing, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation_error: Option<String>,
}

pub const SWEEP_CSV_HEADER: [&str; 8] = [
    "rate",
    "rmse",
    "nll_unscaled",
    "nll_scaled",
    "scale_factor",
    "ma_unscaled",
    "ma_scaled",
    "nll_ideal",
];

/// Writes one row per rate with the [`SWEEP_CSV_HEADER`] columns.
pub fn write_rows_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let doc = |e: csv::Error| Error::Document(e.to_string());
    csv.write_record(SWEEP_CSV_HEADER).map_err(doc)?;
    for r in rows {
        csv.write_record(
            [
                r.rate,
                r.rmse,
                r.nll_unscaled,
                r.nll_scaled,
                r.scale_factor,
                r.ma_unscaled,
                r.ma_scaled,
                r.nll_ideal,
            ]
            .map(|v| v.to_string()),
        )
        .map_err(doc)?;
    }
    csv.flush().map_err(|e| Error::Document(e.to_string()))
}

/// One rate's row plus the Monte Carlo estimate behind it.
pub fn evaluate_rate(
    model: &MlpModel,
    validation: &Dataset,
    rate: f64,
    settings: &SweepSettings,
) -> Result<(SweepRow, McEstimate)> {
    let dropout = DropoutConfig::all_hidden(rate, model)?;
    let est = mc_predict(model, validation.features(), &dropout, settings.passes, rate_seed(settings.seed, rate))?;
    let y = validation.targets();
    let e2 = scaling::ideal_uncertainty(y, &est.mean)?;
    let scale = scaling::optimal_scale(&e2, &est.variance)?;
    let set = CalibrationSet::new(y, &est.mean, &est.variance, settings.alpha_points)?;
    let row = SweepRow {
        rate,
        rmse: metrics::rmse(y, &est.mean)?,
        nll_unscaled: scale.nll_unscaled,
        nll_scaled: scale.nll_scaled,
        scale_factor: scale.factor,
        ma_unscaled: set.miscalibration_area(1.0)?,
        ma_scaled: set.miscalibration_area(scale.factor)?,
        nll_ideal: metrics::gaussian_nll(y, &est.mean, &e2)?,
        train_seed: None,
    };
    Ok((row, est))
}

/// Index of the smallest value; ties go to the earlier (smaller-rate) entry.
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 || (i == 0 && v.is_nan()) {
            best = (i, v);
        }
    }
    best.0
}

fn select(rows: &[SweepRow]) -> Selection {
    let unscaled = argmin(rows.iter().map(|r| r.nll_unscaled));
    let scaled = argmin(rows.iter().map(|r| r.nll_scaled));
    Selection {
        rate_unscaled: rows[unscaled].rate,
        rate_scaled: rows[scaled].rate,
        scale_factor: rows[scaled].scale_factor,
    }
}

fn injected_rows(
    model: &MlpModel,
    validation: &Dataset,
    grid: &RateGrid,
    settings: &SweepSettings,
) -> Result<Vec<(SweepRow, McEstimate)>> {
    grid.rates()
        .iter()
        .map(|&rate| evaluate_rate(model, validation, rate, settings))
        .collect()
}

/// Rate minimizing the raw validation NLL, with the per-rate rows.
pub fn tune_unscaled(
    model: &MlpModel,
    validation: &Dataset,
    grid: &RateGrid,
    settings: &SweepSettings,
) -> Result<(f64, Vec<SweepRow>)> {
    let rows: Vec<SweepRow> = injected_rows(model, validation, grid, settings)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    Ok((select(&rows).rate_unscaled, rows))
}

/// Rate minimizing the validation NLL after optimal scaling, its scale
/// factor, and the per-rate rows.
pub fn tune_scaled(
    model: &MlpModel,
    validation: &Dataset,
    grid: &RateGrid,
    settings: &SweepSettings,
) -> Result<(f64, f64, Vec<SweepRow>)> {
    let rows: Vec<SweepRow> = injected_rows(model, validation, grid, settings)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    let s = select(&rows);
    Ok((s.rate_scaled, s.scale_factor, rows))
}

/// A model trained with dropout active at `rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedModel {
    pub rate: f64,
    pub train_seed: u64,
    pub model: MlpModel,
}

/// Trains one embedded-dropout model per grid rate. All share `init_seed`;
/// the shuffle and mask seed is derived from `config.seed` and the rate.
pub fn train_embedded(
    train_set: &Dataset,
    config: &TrainConfig,
    grid: &RateGrid,
    init_seed: u64,
) -> Result<Vec<EmbeddedModel>> {
    let placement: Vec<usize> = (0..config.hidden.len()).collect();
    grid.rates()
        .iter()
        .map(|&rate| {
            let train_seed = rate_seed(config.seed, rate);
            let cfg = TrainConfig {
                seed: train_seed,
                dropout: Some(DropoutConfig::new(rate, placement.clone())?),
                ..config.clone()
            };
            Ok(EmbeddedModel {
                rate,
                train_seed,
                model: train(train_set, &cfg, init_seed)?,
            })
        })
        .collect()
}

/// Full per-rate table for injected dropout on `plain` and, when given,
/// embedded dropout on the per-rate models. Also relaxes the scale factor at
/// the injected scale-aware choice.
pub fn sweep(
    plain: &MlpModel,
    embedded: Option<&[EmbeddedModel]>,
    validation: &Dataset,
    grid: &RateGrid,
    settings: &SweepSettings,
) -> Result<SweepReport> {
    if validation.is_empty() {
        return Err(Error::EmptyData("validation set is empty"));
    }
    let evaluated = injected_rows(plain, validation, grid, settings)?;
    let rows: Vec<SweepRow> = evaluated.iter().map(|(r, _)| r.clone()).collect();
    let selection = select(&rows);

    let chosen = &evaluated[grid.rates().iter().position(|&r| r == selection.rate_scaled).expect("chosen rate is on the grid")].1;
    let (relaxation, relaxation_error) = match relax_at(validation.targets(), chosen, selection.scale_factor, settings) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let embedded = embedded
        .map(|models| {
            if models.len() != grid.len() || models.iter().zip(grid.rates()).any(|(m, &r)| m.rate != r) {
                return Err(Error::InvalidConfig("embedded models must match the rate grid".into()));
            }
            let rows = models
                .iter()
                .map(|m| {
                    evaluate_rate(&m.model, validation, m.rate, settings).map(|(mut row, _)| {
                        row.train_seed = Some(m.train_seed);
                        row
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let selection = select(&rows);
            Ok(MethodSweep { rows, selection })
        })
        .transpose()?;

    Ok(SweepReport {
        injected: MethodSweep { rows, selection },
        embedded,
        relaxation,
        relaxation_error,
    })
}

/// Brackets around `start` and bisects toward zero balance.
pub fn relax_at(targets: &[f64], est: &McEstimate, start: f64, settings: &SweepSettings) -> Result<RelaxationResult> {
    let set = CalibrationSet::new(targets, &est.mean, &est.variance, settings.alpha_points)?;
    let bracket = scaling::bracket(&set, start)?;
    scaling::relax(&set, bracket, settings.tau)
}
