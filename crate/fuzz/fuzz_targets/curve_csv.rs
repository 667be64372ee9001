#![no_main]
use injectdrop::metrics::{self, CalibrationCurve};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(curve) = CalibrationCurve::read_csv(data) {
        let ma = metrics::miscalibration_area(&curve);
        let balance = metrics::balance(&curve);
        assert!((0.0..=1.0).contains(&ma));
        assert!(balance.abs() <= ma + 1e-12);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(CalibrationCurve::read_csv(buf.as_slice()).unwrap(), curve);
    }
});
