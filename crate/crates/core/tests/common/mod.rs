#![allow(dead_code)]

use injectdrop::data::{Dataset, Features};
use injectdrop::nn::{Activation, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `y = 3x` with `x ~ U(-1, 1)`, noise free.
pub fn linear_task(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-1.0..1.0)]).collect();
    let ys = xs.iter().map(|x| 3.0 * x[0]).collect();
    Dataset::new("linear", Features::from_rows(&xs).unwrap(), ys, None).unwrap()
}

pub fn constant_task(n: usize, value: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    Dataset::new("constant", Features::from_rows(&xs).unwrap(), vec![value; n], None).unwrap()
}

/// Means, variances and targets drawn as `y ~ N(mu, k * var)`.
pub struct Gaussian {
    pub targets: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

pub fn gaussian_instance(n: usize, k: f64, seed: u64) -> Gaussian {
    let mut r = rng(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut r)).collect();
    let variances: Vec<f64> = (0..n).map(|_| r.random_range(-2.0f64..1.0).exp()).collect();
    let targets = means
        .iter()
        .zip(&variances)
        .map(|(m, v)| m + (k * v).sqrt() * std_normal.sample(&mut r))
        .collect();
    Gaussian {
        targets,
        means,
        variances,
    }
}

/// One ReLU hidden unit with unit weights: `f(x) = max(x, 0)`.
pub fn one_one_one() -> MlpModel {
    MlpModel::from_parts(
        vec![1, 1, 1],
        Activation::Relu,
        vec![vec![1.0], vec![1.0]],
        vec![vec![0.0], vec![0.0]],
    )
    .unwrap()
}

pub fn log_grid(low: f64, high: f64, count: usize) -> Vec<f64> {
    let (a, b) = (low.ln(), high.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn parameter_bits(model: &MlpModel) -> Vec<u64> {
    (0..model.layer_sizes().len() - 1)
        .flat_map(|l| model.weights(l).iter().chain(model.biases(l)).map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}
