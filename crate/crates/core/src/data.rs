//! Tabular regression data: CSV ingestion, z-scoring and the repeated
//! train/validation/test split protocol.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Row-major `rows x cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InputShape {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::InputShape {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j])
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Features plus a scalar regression target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Features,
    targets: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Features,
        targets: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyData("dataset has no rows"));
        }
        if features.cols() == 0 {
            return Err(Error::EmptyData("dataset has no feature columns"));
        }
        if targets.len() != features.rows() {
            return Err(Error::InputShape {
                expected: features.rows(),
                got: targets.len(),
            });
        }
        if features.data.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        if let Some(names) = &feature_names {
            if names.len() != features.cols() {
                return Err(Error::InputShape {
                    expected: features.cols(),
                    got: names.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            targets,
            feature_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyData("empty subset"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Domain(format!("row index {bad} out of range")));
        }
        Ok(Self {
            name: self.name.clone(),
            features: self.features.select(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
        })
    }
}

/// Reads a CSV file; the last column is the target.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&name, file)
}

/// Parses CSV text. A first row containing any non-numeric cell is taken as
/// a header. Rows are numbered from 1 in errors, counting the header.
pub fn parse_csv<R: Read>(name: &str, reader: R) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut rows = 0usize;

    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {w} columns, found {}", record.len()),
                });
            }
        } else {
            if record.len() < 2 {
                return Err(Error::Parse {
                    row,
                    message: "need at least one feature column and a target column".into(),
                });
            }
            width = Some(record.len());
            if header.is_none() && rows == 0 && record.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err()) {
                header = Some(record.iter().map(str::to_owned).collect());
                continue;
            }
        }
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    message: format!("missing value in column {}", col + 1),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric value {cell:?} in column {}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value {cell:?} in column {}", col + 1),
                });
            }
            values.push(v);
        }
        rows += 1;
    }

    let width = width.ok_or(Error::EmptyData("CSV has no rows"))?;
    if rows == 0 {
        return Err(Error::EmptyData("CSV has no data rows"));
    }
    let dim = width - 1;
    let mut features = Vec::with_capacity(rows * dim);
    let mut targets = Vec::with_capacity(rows);
    for row in values.chunks_exact(width) {
        features.extend_from_slice(&row[..dim]);
        targets.push(row[dim]);
    }
    let feature_names = header.map(|mut h| {
        h.truncate(dim);
        h
    });
    Dataset::new(name, Features::new(rows, dim, features)?, targets, feature_names)
}

/// Per-column z-scoring fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Columns whose spread is below this (relative to their magnitude) are
/// treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let std = if std <= DEGENERATE_SPREAD * (1.0 + mean.abs()) { 0.0 } else { std };
    (mean, std)
}

impl Standardizer {
    /// Population mean and standard deviation of every column of `train`.
    /// Constant columns get a zero standard deviation and map to 0.
    pub fn fit(train: &Dataset) -> Self {
        let (feature_means, feature_stds) = (0..train.dim())
            .map(|j| mean_std(&train.features().column(j).collect::<Vec<_>>()))
            .unzip();
        let (target_mean, target_std) = mean_std(train.targets());
        Self {
            feature_means,
            feature_stds,
            target_mean,
            target_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_means.len()
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(Error::InputShape {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        let mut values = Vec::with_capacity(data.len() * data.dim());
        for row in data.features().iter_rows() {
            values.extend(row.iter().enumerate().map(|(j, &v)| {
                scale(v, self.feature_means[j], self.feature_stds[j])
            }));
        }
        let targets = data.targets().iter().map(|&y| self.transform_target(y)).collect();
        Dataset::new(
            data.name(),
            Features::new(data.len(), data.dim(), values)?,
            targets,
            data.feature_names.clone(),
        )
    }

    pub fn transform_target(&self, y: f64) -> f64 {
        scale(y, self.target_mean, self.target_std)
    }

    pub fn destandardize_target(&self, z: f64) -> f64 {
        if self.target_std == 0.0 {
            self.target_mean + z
        } else {
            self.target_mean + z * self.target_std
        }
    }

    /// Factor converting a standardized target difference to original units.
    pub fn target_unit(&self) -> f64 {
        if self.target_std == 0.0 {
            1.0
        } else {
            self.target_std
        }
    }
}

#[inline]
fn scale(v: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        (v - mean) / std
    }
}

/// Repeated random hold-out protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub repeats: usize,
    pub base_seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            validation_fraction_of_train: 0.2,
            repeats: 5,
            base_seed: 0,
        }
    }
}

/// Row indices of one repeat. `train` and `validation` together form the
/// training partition; `test` is held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("test fraction", self.test_fraction),
            ("validation fraction", self.validation_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be positive".into()));
        }
        Ok(())
    }

    /// Partition of `n` rows for repeat `repeat`.
    pub fn split(&self, n: usize, repeat: usize) -> Result<Split> {
        self.validate()?;
        if n < 3 {
            return Err(Error::EmptyData("need at least 3 rows to split"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive(self.base_seed, "split", repeat as u64));
        order.shuffle(&mut rng);

        let n_test = ((n as f64 * self.test_fraction).round() as usize).clamp(1, n - 2);
        let rest = n - n_test;
        let n_val = ((rest as f64 * self.validation_fraction_of_train).round() as usize).clamp(1, rest - 1);

        let test = order[..n_test].to_vec();
        let validation = order[n_test..n_test + n_val].to_vec();
        let train = order[n_test + n_val..].to_vec();
        Ok(Split {
            train,
            validation,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_csv_without_header() {
        let d = parse_csv("t", "1,2,3\n4,5,6\n".as_bytes()).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        assert_eq!(d.targets(), &[3.0, 6.0]);
        assert_eq!(d.features().row(1), &[4.0, 5.0]);
        assert!(d.feature_names().is_none());
    }

    #[test]
    fn header_is_detected() {
        let d = parse_csv("t", "x1,x2,y\n1,2,3\n4,5,6\n".as_bytes()).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        assert_eq!(d.feature_names().unwrap(), &["x1".to_string(), "x2".to_string()]);
    }

    #[test]
    fn missing_cell_names_the_row() {
        let err = parse_csv("t", "x,y\n1,2\n3,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn ragged_and_non_numeric_rows_fail() {
        assert!(matches!(
            parse_csv("t", "1,2\n3,4,5\n".as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(matches!(
            parse_csv("t", "1,2\n3,abc\n".as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(matches!(
            parse_csv("t", "1,2\nNaN,4\n".as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(parse_csv("t", "".as_bytes()).is_err());
        assert!(parse_csv("t", "a,b\n".as_bytes()).is_err());
        assert!(parse_csv("t", "1\n2\n".as_bytes()).is_err());
    }

    #[test]
    fn unreadable_file_reports_path() {
        let err = load_csv("/nonexistent/dir/file.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/file.csv"));
    }

    fn sample() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.7 - 3.0, 4.2, (i as f64).sqrt()])
            .collect();
        let targets = (0..50).map(|i| 10.0 + (i as f64).sin() * 3.0).collect();
        Dataset::new("s", Features::from_rows(&rows).unwrap(), targets, None).unwrap()
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let data = sample();
        let s = Standardizer::fit(&data);
        let t = s.transform(&data).unwrap();
        for j in [0, 2] {
            let col: Vec<f64> = t.features().column(j).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(mean.abs() < 1e-10 && (std - 1.0).abs() < 1e-10);
        }
        assert!(t.features().column(1).all(|v| v == 0.0), "constant column maps to 0");
        let mean = t.targets().iter().sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn target_round_trip() {
        let data = sample();
        let s = Standardizer::fit(&data);
        for &y in data.targets() {
            assert!((s.destandardize_target(s.transform_target(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let plan = SplitPlan::default();
        for repeat in 0..5 {
            let s = plan.split(103, repeat).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
            assert_eq!(s.test.len(), 10);
            assert_eq!(s.validation.len(), 19);
        }
        assert_ne!(plan.split(103, 0).unwrap(), plan.split(103, 1).unwrap());
        assert_eq!(plan.split(103, 2).unwrap(), plan.split(103, 2).unwrap());
    }

    #[test]
    fn split_plan_is_validated() {
        let plan = SplitPlan {
            test_fraction: 1.0,
            ..SplitPlan::default()
        };
        assert!(plan.split(10, 0).is_err());
        let plan = SplitPlan {
            repeats: 0,
            ..SplitPlan::default()
        };
        assert!(plan.validate().is_err());
    }
}
