#![no_main]
use injectdrop::nn::MlpModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Cap the work done on a single input.
    if text.len() > 1 << 16 {
        return;
    }
    if let Ok(model) = MlpModel::from_json(text) {
        // Accepted documents survive a round trip unchanged.
        let again = MlpModel::from_json(&model.to_json()).expect("re-parse of own output");
        assert_eq!(model, again);
        if model.parameter_count() < 10_000 {
            let x = vec![0.5; model.input_dim()];
            let _ = model.forward(&x);
        }
    }
});
