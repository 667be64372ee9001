//! Repeated hold-out experiment.
//!
//! Each repeat splits the data, standardizes on the training rows, trains a
//! plain model (and, optionally, one embedded-dropout model per rate), tunes
//! the dropout rate, scale factor and relaxed scale factor on the validation
//! rows only, and finally scores the chosen settings on the test rows.
//!
//! All randomness is derived from `split.base_seed` and the repeat index, so
//! a report is a pure function of the dataset and the configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SplitPlan, Standardizer};
use crate::dropout::DropoutConfig;
use crate::mc::{mc_predict, McEstimate};
use crate::metrics::{self, CalibrationCurve};
use crate::nn::{train, MlpModel, TrainConfig};
use crate::scaling::CalibrationSet;
use crate::tuner::{self, RateGrid, Selection, SweepReport, SweepSettings};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub split: SplitPlan,
    /// Architecture and optimizer. `seed` and `dropout` are replaced per repeat.
    pub train: TrainConfig,
    pub grid: RateGrid,
    /// `seed` is replaced per repeat.
    pub sweep: SweepSettings,
    /// Also train and evaluate embedded-dropout models.
    pub embedded: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        if self.sweep.passes < 2 {
            return Err(Error::InvalidConfig("need at least 2 Monte Carlo passes".into()));
        }
        metrics::alpha_grid(self.sweep.alpha_points)?;
        if !(self.sweep.tau > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub init: u64,
    pub train: u64,
    pub validation_mc: u64,
    pub test_mc: u64,
}

impl RepeatSeeds {
    fn derive(base: u64, repeat: usize) -> Self {
        let r = repeat as u64;
        Self {
            init: rng::derive(base, "init", r),
            train: rng::derive(base, "train", r),
            validation_mc: rng::derive(base, "validation-mc", r),
            test_mc: rng::derive(base, "test-mc", r),
        }
    }
}

/// Test-set scores of the rates chosen on validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub rate_unscaled: f64,
    pub rate_scaled: f64,
    pub scale_factor: f64,
    pub relaxed_factor: Option<f64>,
    /// RMSE of the Monte Carlo mean, original target units.
    pub rmse_unscaled: f64,
    pub rmse_scaled: f64,
    /// NLL in standardized target units.
    pub nll_unscaled: f64,
    pub nll_scaled: f64,
    pub nll_relaxed: Option<f64>,
    pub ma_unscaled: f64,
    pub ma_scaled: f64,
    pub ma_relaxed: Option<f64>,
}

/// Test calibration curves at the scale-aware rate: unscaled, at `C` and at `C_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCurves {
    pub rate: f64,
    /// NLL of the unscaled variance at `rate`.
    pub nll_unscaled: f64,
    pub unscaled: CalibrationCurve,
    pub scaled: CalibrationCurve,
    pub relaxed: Option<CalibrationCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub seeds: RepeatSeeds,
    pub split: Split,
    pub standardizer: Standardizer,
    /// Deterministic (no dropout) test RMSE of the plain model, original units.
    pub rmse_plain: f64,
    pub sweep: SweepReport,
    pub injected_test: TestMetrics,
    pub embedded_test: Option<TestMetrics>,
    pub curves: TestCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub rows: usize,
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatReport>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        if report.repeats.len() != report.config.split.repeats {
            return Err(Error::Document(format!(
                "report lists {} repeats but its configuration asks for {}",
                report.repeats.len(),
                report.config.split.repeats
            )));
        }
        Ok(report)
    }
}

pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let repeats = (0..config.split.repeats)
        .into_par_iter()
        .map(|r| {
            run_repeat(dataset, config, r).map_err(|e| Error::Repeat {
                repeat: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(&repeats);
    Ok(ExperimentReport {
        dataset: dataset.name().to_owned(),
        rows: dataset.len(),
        config: config.clone(),
        repeats,
        aggregates,
    })
}

fn run_repeat(dataset: &Dataset, config: &ExperimentConfig, repeat: usize) -> Result<RepeatReport> {
    let split = config.split.split(dataset.len(), repeat)?;
    let seeds = RepeatSeeds::derive(config.split.base_seed, repeat);

    let raw_train = dataset.subset(&split.train)?;
    let standardizer = Standardizer::fit(&raw_train);
    let train_set = standardizer.transform(&raw_train)?;
    let validation = standardizer.transform(&dataset.subset(&split.validation)?)?;
    let test = standardizer.transform(&dataset.subset(&split.test)?)?;

    let train_config = TrainConfig {
        seed: seeds.train,
        dropout: None,
        ..config.train.clone()
    };
    let plain = train(&train_set, &train_config, seeds.init)?;
    let embedded = if config.embedded {
        Some(tuner::train_embedded(&train_set, &train_config, &config.grid, seeds.init)?)
    } else {
        None
    };

    let sweep_settings = SweepSettings {
        seed: seeds.validation_mc,
        ..config.sweep
    };
    let sweep = tuner::sweep(&plain, embedded.as_deref(), &validation, &config.grid, &sweep_settings)?;

    let unit = standardizer.target_unit();
    let plain_predictions: Vec<f64> = test
        .features()
        .iter_rows()
        .map(|x| plain.forward(x))
        .collect::<Result<_>>()?;
    let rmse_plain = metrics::rmse(test.targets(), &plain_predictions)? * unit;

    let test_settings = SweepSettings {
        seed: seeds.test_mc,
        ..config.sweep
    };
    let relaxed = sweep.relaxation.map(|r| r.factor_relaxed);
    let (injected_test, curves) = score_on_test(
        |_| Ok(&plain),
        &test,
        &sweep.injected.selection,
        relaxed,
        &test_settings,
        unit,
    )?;
    let embedded_test = match (&embedded, &sweep.embedded) {
        (Some(models), Some(method)) => {
            let model_for = |rate: f64| {
                models
                    .iter()
                    .find(|m| m.rate == rate)
                    .map(|m| &m.model)
                    .ok_or_else(|| Error::InvalidConfig(format!("no embedded model for rate {rate}")))
            };
            Some(score_on_test(model_for, &test, &method.selection, None, &test_settings, unit)?.0)
        }
        _ => None,
    };

    Ok(RepeatReport {
        repeat,
        seeds,
        split,
        standardizer,
        rmse_plain,
        sweep,
        injected_test,
        embedded_test,
        curves,
    })
}

fn score_on_test<'m>(
    model_for: impl Fn(f64) -> Result<&'m MlpModel>,
    test: &Dataset,
    selection: &Selection,
    relaxed: Option<f64>,
    settings: &SweepSettings,
    unit: f64,
) -> Result<(TestMetrics, TestCurves)> {
    let estimate = |rate: f64| -> Result<McEstimate> {
        let model = model_for(rate)?;
        let dropout = DropoutConfig::all_hidden(rate, model)?;
        mc_predict(model, test.features(), &dropout, settings.passes, tuner::rate_seed(settings.seed, rate))
    };
    let y = test.targets();

    let unscaled = estimate(selection.rate_unscaled)?;
    let unscaled_set = CalibrationSet::new(y, &unscaled.mean, &unscaled.variance, settings.alpha_points)?;

    let scaled_est = if selection.rate_scaled == selection.rate_unscaled {
        unscaled.clone()
    } else {
        estimate(selection.rate_scaled)?
    };
    let set = CalibrationSet::new(y, &scaled_est.mean, &scaled_est.variance, settings.alpha_points)?;
    let nll_at = |c: f64| -> Result<f64> {
        metrics::gaussian_nll(y, &scaled_est.mean, &crate::scaling::apply_scale(&scaled_est.variance, c)?)
    };

    let c = selection.scale_factor;
    let metrics = TestMetrics {
        rate_unscaled: selection.rate_unscaled,
        rate_scaled: selection.rate_scaled,
        scale_factor: c,
        relaxed_factor: relaxed,
        rmse_unscaled: metrics::rmse(y, &unscaled.mean)? * unit,
        rmse_scaled: metrics::rmse(y, &scaled_est.mean)? * unit,
        nll_unscaled: metrics::gaussian_nll(y, &unscaled.mean, &unscaled.variance)?,
        nll_scaled: nll_at(c)?,
        nll_relaxed: relaxed.map(nll_at).transpose()?,
        ma_unscaled: unscaled_set.miscalibration_area(1.0)?,
        ma_scaled: set.miscalibration_area(c)?,
        ma_relaxed: relaxed.map(|r| set.miscalibration_area(r)).transpose()?,
    };
    let curves = TestCurves {
        rate: selection.rate_scaled,
        nll_unscaled: nll_at(1.0)?,
        unscaled: set.curve(1.0)?,
        scaled: set.curve(c)?,
        relaxed: relaxed.map(|r| set.curve(r)).transpose()?,
    };
    Ok((metrics, curves))
}

fn test_metric_fields(prefix: &str, m: &TestMetrics) -> Vec<(String, Option<f64>)> {
    [
        ("rate_unscaled", Some(m.rate_unscaled)),
        ("rate_scaled", Some(m.rate_scaled)),
        ("scale_factor", Some(m.scale_factor)),
        ("relaxed_factor", m.relaxed_factor),
        ("rmse_unscaled", Some(m.rmse_unscaled)),
        ("rmse_scaled", Some(m.rmse_scaled)),
        ("nll_unscaled", Some(m.nll_unscaled)),
        ("nll_scaled", Some(m.nll_scaled)),
        ("nll_relaxed", m.nll_relaxed),
        ("ma_unscaled", Some(m.ma_unscaled)),
        ("ma_scaled", Some(m.ma_scaled)),
        ("ma_relaxed", m.ma_relaxed),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}.{k}"), v))
    .collect()
}

/// Mean and sample standard deviation of every test metric across repeats.
/// Missing optional values are skipped, and `count` says how many were present.
fn aggregate(repeats: &[RepeatReport]) -> Vec<Aggregate> {
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for r in repeats {
        let mut fields = vec![("rmse_plain".to_owned(), Some(r.rmse_plain))];
        fields.extend(test_metric_fields("injected", &r.injected_test));
        if let Some(e) = &r.embedded_test {
            fields.extend(test_metric_fields("embedded", e));
        }
        for (name, value) in fields {
            let slot = match columns.iter().position(|(n, _)| *n == name) {
                Some(i) => i,
                None => {
                    columns.push((name, Vec::new()));
                    columns.len() - 1
                }
            };
            if let Some(v) = value {
                columns[slot].1.push(v);
            }
        }
    }
    columns
        .into_iter()
        .map(|(metric, values)| {
            let count = values.len();
            let mean = if count == 0 { f64::NAN } else { values.iter().sum::<f64>() / count as f64 };
            let std = if count < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            };
            Aggregate {
                metric,
                mean: if count == 0 { 0.0 } else { mean },
                std,
                count,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Features;

    fn linear_task(n: usize) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.618_033_988_75).fract() * 2.0 - 1.0]).collect();
        let ys = xs.iter().map(|x| 3.0 * x[0]).collect();
        Dataset::new("linear", Features::from_rows(&xs).unwrap(), ys, None).unwrap()
    }

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            split: SplitPlan {
                repeats: 2,
                base_seed: 11,
                ..SplitPlan::default()
            },
            train: TrainConfig {
                hidden: vec![16],
                epochs: 40,
                ..TrainConfig::default()
            },
            grid: RateGrid::new(vec![0.01, 0.1, 0.3]).unwrap(),
            sweep: SweepSettings {
                passes: 20,
                alpha_points: 19,
                ..SweepSettings::default()
            },
            embedded: true,
        }
    }

    #[test]
    fn experiment_is_reproducible() {
        let data = linear_task(200);
        let config = quick_config();
        let a = run_experiment(&data, &config).unwrap();
        let b = run_experiment(&data, &config).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.repeats.len(), 2);
        for r in &a.repeats {
            assert!(config.grid.contains(r.injected_test.rate_scaled));
            assert!(config.grid.contains(r.injected_test.rate_unscaled));
            assert!(r.embedded_test.is_some());
            assert_eq!(r.sweep.embedded.as_ref().unwrap().rows.len(), 3);
            assert_eq!(r.curves.scaled.len(), 19);
        }
        let agg = a.aggregates.iter().find(|g| g.metric == "rmse_plain").unwrap();
        assert_eq!(agg.count, 2);
    }

    #[test]
    fn report_json_round_trips() {
        let data = linear_task(120);
        let mut config = quick_config();
        config.embedded = false;
        config.split.repeats = 1;
        let report = run_experiment(&data, &config).unwrap();
        let back = ExperimentReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back.to_json(), report.to_json());
    }

    #[test]
    fn invalid_config_is_rejected_up_front() {
        let data = linear_task(50);
        let mut config = quick_config();
        config.sweep.passes = 1;
        assert!(matches!(run_experiment(&data, &config), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn aggregates_use_sample_std() {
        let data = linear_task(150);
        let mut config = quick_config();
        config.embedded = false;
        config.split.repeats = 3;
        let report = run_experiment(&data, &config).unwrap();
        let plain: Vec<f64> = report.repeats.iter().map(|r| r.rmse_plain).collect();
        let m = plain.iter().sum::<f64>() / 3.0;
        let s = (plain.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
        let agg = report.aggregates.iter().find(|g| g.metric == "rmse_plain").unwrap();
        assert!((agg.mean - m).abs() < 1e-12 && (agg.std - s).abs() < 1e-12);
        assert_eq!(agg.count, 3);
    }
}
