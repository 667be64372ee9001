//! Dropout configuration and Bernoulli masks over hidden-layer activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::MlpModel;
use crate::rng::StreamId;
use crate::{Error, Result};

/// Dropout rate plus the hidden layers it applies to.
///
/// Hidden layers are numbered from 0 (the first layer after the input). The
/// input itself is never masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    rate: f64,
    placement: Vec<usize>,
}

impl DropoutConfig {
    pub fn new(rate: f64, mut placement: Vec<usize>) -> Result<Self> {
        validate_rate(rate)?;
        placement.sort_unstable();
        placement.dedup();
        Ok(Self { rate, placement })
    }

    /// Dropout on every hidden layer of `model`.
    pub fn all_hidden(rate: f64, model: &MlpModel) -> Result<Self> {
        Self::new(rate, (0..model.hidden_count()).collect())
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn placement(&self) -> &[usize] {
        &self.placement
    }

    /// Same placement, different rate.
    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(rate, self.placement.clone())
    }

    pub fn validate_for(&self, model: &MlpModel) -> Result<()> {
        let hidden = model.hidden_count();
        if let Some(&bad) = self.placement.iter().find(|&&l| l >= hidden) {
            return Err(Error::InvalidConfig(format!(
                "dropout placement {bad} is not a hidden layer (model has {hidden})"
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Binary keep/drop pattern for each hidden layer.
///
/// `units[l]` is `None` when hidden layer `l` is not masked. A `true` entry
/// keeps the unit; kept activations are rescaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    rate: f64,
    stream: Option<StreamId>,
    units: Vec<Option<Vec<bool>>>,
}

impl DropoutMask {
    /// Builds a mask from explicit keep flags.
    pub fn from_units(rate: f64, units: Vec<Option<Vec<bool>>>) -> Result<Self> {
        validate_rate(rate)?;
        Ok(Self {
            rate,
            stream: None,
            units,
        })
    }

    /// A mask that keeps every unit of every hidden layer.
    pub fn keep_all(model: &MlpModel) -> Self {
        Self {
            rate: 0.0,
            stream: None,
            units: (0..model.hidden_count())
                .map(|l| Some(vec![true; model.layer_sizes()[l + 1]]))
                .collect(),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Stream the mask was drawn from, if it was sampled.
    pub fn stream(&self) -> Option<StreamId> {
        self.stream
    }

    pub fn units(&self) -> &[Option<Vec<bool>>] {
        &self.units
    }

    pub fn layer(&self, hidden: usize) -> Option<&[bool]> {
        self.units.get(hidden).and_then(|u| u.as_deref())
    }

    /// Multiplier applied to kept activations.
    pub fn keep_scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    pub fn dropped(&self) -> usize {
        self.units
            .iter()
            .flatten()
            .map(|l| l.iter().filter(|k| !**k).count())
            .sum()
    }

    pub fn masked_units(&self) -> usize {
        self.units.iter().flatten().map(Vec::len).sum()
    }

    pub fn check_shape(&self, model: &MlpModel) -> Result<()> {
        let hidden = model.hidden_count();
        if self.units.len() != hidden {
            return Err(Error::InputShape {
                expected: hidden,
                got: self.units.len(),
            });
        }
        for (l, layer) in self.units.iter().enumerate() {
            if let Some(flags) = layer {
                let width = model.layer_sizes()[l + 1];
                if flags.len() != width {
                    return Err(Error::InputShape {
                        expected: width,
                        got: flags.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Draws a mask for `model`: every unit in a masked layer is dropped
/// independently with probability `config.rate()`.
pub fn sample_mask(config: &DropoutConfig, model: &MlpModel, stream: StreamId) -> Result<DropoutMask> {
    config.validate_for(model)?;
    let mut rng = stream.rng();
    Ok(sample_with(config, model, &mut rng, Some(stream)))
}

pub(crate) fn sample_with<R: Rng + ?Sized>(
    config: &DropoutConfig,
    model: &MlpModel,
    rng: &mut R,
    stream: Option<StreamId>,
) -> DropoutMask {
    let rate = config.rate();
    let mut units: Vec<Option<Vec<bool>>> = vec![None; model.hidden_count()];
    for &l in config.placement() {
        let width = model.layer_sizes()[l + 1];
        let flags = if rate == 0.0 {
            vec![true; width]
        } else {
            (0..width).map(|_| rng.random::<f64>() >= rate).collect()
        };
        units[l] = Some(flags);
    }
    DropoutMask {
        rate,
        stream,
        units,
    }
}
