//! Monte Carlo dropout: `T` masked passes reduced to a predictive mean and
//! variance per instance.
//!
//! Pass `t` uses the mask drawn from stream `(base_seed, t)`, shared by every
//! instance in the batch. Passes run in parallel; the reduction is sequential
//! over the stored per-pass predictions, so the result is bit-identical for
//! any thread count.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::dropout::{sample_mask, DropoutConfig};
use crate::nn::{MlpModel, Scratch};
use crate::rng::StreamId;
use crate::{Error, Result};

pub const DEFAULT_PASSES: usize = 100;

/// Predictive mean and variance (squared target units) per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub passes: usize,
    pub rate: f64,
}

impl McEstimate {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Writes `instance_id,mean,variance` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let to_io = |e: csv::Error| Error::Document(e.to_string());
        csv.write_record(["instance_id", "mean", "variance"]).map_err(to_io)?;
        for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            csv.write_record([i.to_string(), m.to_string(), v.to_string()]).map_err(to_io)?;
        }
        csv.flush().map_err(|e| Error::Document(e.to_string()))?;
        Ok(())
    }

    /// Reads the CSV written by [`McEstimate::write_csv`]. Instance ids must
    /// run 0, 1, 2, ... in order. `passes` and `rate` are not stored in the
    /// file and are set to 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers().map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != ["instance_id", "mean", "variance"] {
            return Err(Error::Parse {
                row: 1,
                message: "expected header instance_id,mean,variance".into(),
            });
        }
        let mut mean = Vec::new();
        let mut variance = Vec::new();
        for (i, record) in csv.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            let field = |k: usize| -> Result<&str> {
                record.get(k).ok_or_else(|| Error::Parse {
                    row,
                    message: "expected 3 columns".into(),
                })
            };
            let id: usize = field(0)?.parse().map_err(|_| Error::Parse {
                row,
                message: "instance_id is not a non-negative integer".into(),
            })?;
            if id != i {
                return Err(Error::Parse {
                    row,
                    message: format!("expected instance_id {i}, found {id}"),
                });
            }
            let parse = |k: usize, what: &str| -> Result<f64> {
                let v: f64 = field(k)?.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("{what} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("{what} is not finite"),
                    });
                }
                Ok(v)
            };
            mean.push(parse(1, "mean")?);
            let v = parse(2, "variance")?;
            if v < 0.0 {
                return Err(Error::Parse {
                    row,
                    message: "variance is negative".into(),
                });
            }
            variance.push(v);
        }
        if mean.is_empty() {
            return Err(Error::EmptyData("no predictions"));
        }
        Ok(Self {
            mean,
            variance,
            passes: 0,
            rate: 0.0,
        })
    }
}

/// Runs `passes` dropout-masked forward passes over every row of `inputs`.
pub fn mc_predict(
    model: &MlpModel,
    inputs: &Features,
    dropout: &DropoutConfig,
    passes: usize,
    base_seed: u64,
) -> Result<McEstimate> {
    if passes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 Monte Carlo passes, got {passes}"
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyData("no inputs"));
    }
    if inputs.cols() != model.input_dim() {
        return Err(Error::InputShape {
            expected: model.input_dim(),
            got: inputs.cols(),
        });
    }
    dropout.validate_for(model)?;

    let per_pass: Vec<Vec<f64>> = (0..passes as u64)
        .into_par_iter()
        .map(|t| {
            let mask = sample_mask(dropout, model, StreamId::new(base_seed, t))?;
            let mut scratch = Scratch::default();
            Ok(inputs
                .iter_rows()
                .map(|x| model.run(x, Some(&mask), &mut scratch))
                .collect())
        })
        .collect::<Result<_>>()?;

    let (mean, variance) = reduce(&per_pass, inputs.rows());
    Ok(McEstimate {
        mean,
        variance,
        passes,
        rate: dropout.rate(),
    })
}

/// Sample mean and unbiased sample variance per instance.
///
/// Deviations are taken from the first pass before averaging, so identical
/// passes give exactly the common value and exactly zero variance.
fn reduce(per_pass: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let t = per_pass.len() as f64;
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = per_pass[0][i];
        let shift = per_pass.iter().map(|p| p[i] - anchor).sum::<f64>() / t;
        let ss = per_pass
            .iter()
            .map(|p| {
                let d = p[i] - anchor - shift;
                d * d
            })
            .sum::<f64>();
        mean.push(anchor + shift);
        variance.push(ss / (t - 1.0));
    }
    (mean, variance)
}
