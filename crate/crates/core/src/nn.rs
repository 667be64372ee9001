//! Dense feed-forward regressor.
//!
//! Hidden layers share one activation; the single output unit is linear.
//! Weights are stored row-major with shape `(out, in)` per layer.
//!
//! Dropout masks act on hidden activations after the nonlinearity. Kept
//! units are rescaled by `1 / (1 - rate)` (inverted dropout), so a rate of
//! zero reproduces the deterministic pass exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dropout::{DropoutConfig, DropoutMask};
use crate::rng::StreamId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// No nonlinearity. Useful for analysis; not a sensible regressor.
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative from the pre-activation `z`. The rectifier's derivative at 0 is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

/// A trained (or freshly initialized) regressor. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Builds a model from explicit parameters, checking every shape.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_sizes(&layer_sizes)?;
        let depth = layer_sizes.len() - 1;
        if weights.len() != depth || biases.len() != depth {
            return Err(Error::Document(format!(
                "expected {depth} weight and bias arrays, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (inputs, outputs) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.len() != inputs * outputs {
                return Err(Error::Document(format!(
                    "layer {l}: weight matrix has {} entries, expected {outputs}x{inputs}",
                    w.len()
                )));
            }
            if b.len() != outputs {
                return Err(Error::Document(format!(
                    "layer {l}: bias has {} entries, expected {outputs}",
                    b.len()
                )));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::Document(format!("layer {l}: non-finite parameter")));
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights: w,
                biases: b,
            });
        }
        Ok(Self {
            layer_sizes,
            activation,
            layers,
        })
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn initialized(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|pair| {
                let (inputs, outputs) = (pair[0], pair[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    inputs,
                    outputs,
                    weights,
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    /// Row-major weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        &self.layers[l].weights
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        &self.layers[l].biases
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Deterministic prediction.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.run(x, None, &mut Scratch::default()))
    }

    /// Prediction with a dropout mask applied to hidden activations.
    pub fn forward_dropout(&self, x: &[f64], mask: &DropoutMask) -> Result<f64> {
        self.check_input(x)?;
        mask.check_shape(self)?;
        Ok(self.run(x, Some(mask), &mut Scratch::default()))
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Unchecked pass; callers validate shapes.
    pub(crate) fn run(&self, x: &[f64], mask: Option<&DropoutMask>, scratch: &mut Scratch) -> f64 {
        let Scratch { current, next } = scratch;
        current.clear();
        current.extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(current, next);
            if l < last {
                for z in next.iter_mut() {
                    *z = self.activation.apply(*z);
                }
                if let Some(flags) = mask.and_then(|m| m.layer(l)) {
                    apply_mask(next, flags, mask.map_or(1.0, DropoutMask::keep_scale));
                }
            }
            std::mem::swap(current, next);
        }
        current[0]
    }

    fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers.iter_mut().map(|l| (&mut l.weights, &mut l.biases))
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Serializes to the model JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        doc.try_into()
    }
}

#[inline]
fn apply_mask(values: &mut [f64], keep: &[bool], scale: f64) {
    for (v, &k) in values.iter_mut().zip(keep) {
        *v = if k { *v * scale } else { 0.0 };
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig(
            "a model needs at least an input and an output layer".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("layer sizes must be positive".into()));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::InvalidConfig("the output layer must have exactly one unit".into()));
    }
    if sizes.windows(2).any(|w| w[0].checked_mul(w[1]).is_none()) {
        return Err(Error::InvalidConfig("layer sizes overflow the weight count".into()));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub(crate) struct Scratch {
    current: Vec<f64>,
    next: Vec<f64>,
}

/// On-disk form of a model.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<&MlpModel> for ModelDocument {
    fn from(model: &MlpModel) -> Self {
        Self {
            layer_sizes: model.layer_sizes.clone(),
            activation: model.activation,
            weights: model.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: model.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }
}

impl TryFrom<ModelDocument> for MlpModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        MlpModel::from_parts(doc.layer_sizes, doc.activation, doc.weights, doc.biases)
    }
}

/// Gradient of the mean squared error with respect to every parameter,
/// laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|g| g.fill(0.0));
    }
}

/// Per-sample buffers for backpropagation.
struct Trace {
    /// Layer inputs: `inputs[l]` feeds layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

impl Trace {
    fn new(model: &MlpModel) -> Self {
        Self {
            inputs: model.layer_sizes[..model.layer_sizes.len() - 1]
                .iter()
                .map(|&n| Vec::with_capacity(n))
                .collect(),
            pre: vec![Vec::new(); model.hidden_count()],
            delta: Vec::new(),
            back: Vec::new(),
        }
    }
}

/// Mean squared error over `rows` and its gradient, with an optional mask
/// shared by every row.
pub fn loss_and_gradient(
    model: &MlpModel,
    data: &Dataset,
    rows: &[usize],
    mask: Option<&DropoutMask>,
) -> Result<(f64, Gradients)> {
    if rows.is_empty() {
        return Err(Error::EmptyData("no rows for gradient"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::InputShape {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if let Some(m) = mask {
        m.check_shape(model)?;
    }
    let mut grads = Gradients::zeros(model);
    let mut trace = Trace::new(model);
    let loss = accumulate(model, data, rows, mask, &mut grads, &mut trace);
    Ok((loss, grads))
}

fn accumulate(
    model: &MlpModel,
    data: &Dataset,
    rows: &[usize],
    mask: Option<&DropoutMask>,
    grads: &mut Gradients,
    trace: &mut Trace,
) -> f64 {
    let batch = rows.len() as f64;
    let last = model.layers.len() - 1;
    let scale = mask.map_or(1.0, DropoutMask::keep_scale);
    let mut loss = 0.0;
    let mut out = Vec::new();

    for &row in rows {
        let x = data.features().row(row);
        let y = data.targets()[row];

        trace.inputs[0].clear();
        trace.inputs[0].extend_from_slice(x);
        for (l, layer) in model.layers.iter().enumerate() {
            layer.affine(&trace.inputs[l], &mut out);
            if l < last {
                trace.pre[l].clear();
                trace.pre[l].extend_from_slice(&out);
                for z in out.iter_mut() {
                    *z = model.activation.apply(*z);
                }
                if let Some(flags) = mask.and_then(|m| m.layer(l)) {
                    apply_mask(&mut out, flags, scale);
                }
                trace.inputs[l + 1].clear();
                trace.inputs[l + 1].extend_from_slice(&out);
            }
        }
        let residual = out[0] - y;
        loss += residual * residual / batch;

        trace.delta.clear();
        trace.delta.push(2.0 * residual / batch);
        for l in (0..=last).rev() {
            let layer = &model.layers[l];
            let input = &trace.inputs[l];
            for (o, &d) in trace.delta.iter().enumerate() {
                grads.biases[l][o] += d;
                let row = &mut grads.weights[l][o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            // Back through layer l's weights into hidden layer l-1.
            trace.back.clear();
            trace.back.resize(layer.inputs, 0.0);
            for (o, &d) in trace.delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, &w) in trace.back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            if let Some(flags) = mask.and_then(|m| m.layer(l - 1)) {
                apply_mask(&mut trace.back, flags, scale);
            }
            for (b, &z) in trace.back.iter_mut().zip(&trace.pre[l - 1]) {
                *b *= model.activation.derivative(z);
            }
            std::mem::swap(&mut trace.delta, &mut trace.back);
        }
    }
    loss
}

/// Mini-batch SGD settings.
///
/// With `dropout` set, a fresh mask is drawn for every mini-batch (embedded
/// dropout). Without it the model trains deterministically apart from the
/// shuffle, ready for dropout injection at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: Option<DropoutConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50],
            activation: Activation::Relu,
            batch_size: 32,
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
            dropout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    pub fn with_dropout(&self, dropout: Option<DropoutConfig>) -> Self {
        Self {
            dropout,
            ..self.clone()
        }
    }
}

/// Fits a fresh model to `data` by mini-batch SGD on the mean squared error.
pub fn train(data: &Dataset, config: &TrainConfig, init_seed: u64) -> Result<MlpModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("training set is empty"));
    }
    let mut model = MlpModel::initialized(&config.layer_sizes(data.dim()), config.activation, init_seed)?;
    if let Some(dropout) = &config.dropout {
        dropout.validate_for(&model)?;
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grads = Gradients::zeros(&model);
    let mut trace = Trace::new(&model);
    let mut batch_index = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for rows in order.chunks(config.batch_size) {
            let mask = config.dropout.as_ref().map(|d| {
                let stream = StreamId::new(config.seed, batch_index);
                crate::dropout::sample_with(d, &model, &mut stream.rng(), Some(stream))
            });
            batch_index += 1;
            grads.reset();
            let loss = accumulate(&model, data, rows, mask.as_ref(), &mut grads, &mut trace);
            epoch_loss += loss * rows.len() as f64;
            let lr = config.learning_rate;
            for ((w, b), (gw, gb)) in model.params_mut().zip(grads.weights.iter().zip(&grads.biases)) {
                w.iter_mut().zip(gw).for_each(|(p, g)| *p -= lr * g);
                b.iter_mut().zip(gb).for_each(|(p, g)| *p -= lr * g);
            }
        }
        if !epoch_loss.is_finite() || !model.all_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(model)
}
