#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = injectdrop::data::parse_csv("fuzz", data) {
        assert!(ds.len() > 0 && ds.dim() > 0);
        assert_eq!(ds.targets().len(), ds.features().rows());
        assert!(ds.targets().iter().all(|v| v.is_finite()));
    }
});
