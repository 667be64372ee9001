#![no_main]
use injectdrop::mc::McEstimate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(est) = McEstimate::read_csv(data) {
        assert_eq!(est.mean.len(), est.variance.len());
        assert!(est.variance.iter().all(|v| *v >= 0.0));
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let again = McEstimate::read_csv(buf.as_slice()).expect("re-parse of own output");
        assert_eq!(est.mean, again.mean);
        assert_eq!(est.variance, again.variance);
    }
});
