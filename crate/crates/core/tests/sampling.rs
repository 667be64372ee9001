mod common;

use injectdrop::data::Features;
use injectdrop::dropout::DropoutConfig;
use injectdrop::mc::mc_predict;
use injectdrop::nn::{Activation, MlpModel};

fn inputs(n: usize, dim: usize, seed: u64) -> Features {
    use rand::Rng;
    let mut r = common::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    Features::from_rows(&rows).unwrap()
}

/// With a linear hidden layer, inverted dropout leaves the expected output
/// equal to the deterministic output.
#[test]
fn linear_network_is_unbiased_under_dropout() {
    let model = MlpModel::initialized(&[3, 40, 1], Activation::Linear, 9).unwrap();
    let x = inputs(20, 3, 9);
    let dropout = DropoutConfig::all_hidden(0.3, &model).unwrap();
    let passes = 4000;
    let est = mc_predict(&model, &x, &dropout, passes, 90).unwrap();
    for (i, row) in x.iter_rows().enumerate() {
        let exact = model.forward(row).unwrap();
        let se = (est.variance[i] / passes as f64).sqrt();
        assert!(
            (est.mean[i] - exact).abs() <= 4.0 * se + 1e-12,
            "instance {i}: mean {} vs {exact} (se {se})",
            est.mean[i]
        );
    }
}

#[test]
fn variance_grows_with_rate() {
    let model = MlpModel::initialized(&[2, 50, 1], Activation::Relu, 4).unwrap();
    let x = inputs(200, 2, 4);
    let mean_variance = |rate: f64| {
        let dropout = DropoutConfig::all_hidden(rate, &model).unwrap();
        let est = mc_predict(&model, &x, &dropout, 100, 44).unwrap();
        est.variance.iter().sum::<f64>() / est.variance.len() as f64
    };
    let (low, high) = (mean_variance(0.001), mean_variance(0.05));
    assert!(low <= high, "{low} > {high}");
}

#[test]
fn two_layer_placement_masks_only_listed_layers() {
    let model = MlpModel::initialized(&[2, 8, 8, 1], Activation::Tanh, 5).unwrap();
    let x = inputs(10, 2, 5);
    let none = DropoutConfig::new(0.4, vec![]).unwrap();
    let est = mc_predict(&model, &x, &none, 10, 1).unwrap();
    assert!(est.variance.iter().all(|&v| v == 0.0));
    let second = DropoutConfig::new(0.4, vec![1]).unwrap();
    let est = mc_predict(&model, &x, &second, 50, 1).unwrap();
    assert!(est.variance.iter().any(|&v| v > 0.0));
}
