#![no_main]
use injectdrop::tuner::RateGrid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = RateGrid::parse(text) {
        let rates = grid.rates();
        assert!(!rates.is_empty());
        assert!(rates.iter().all(|r| (0.0..1.0).contains(r)));
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
    }
});
