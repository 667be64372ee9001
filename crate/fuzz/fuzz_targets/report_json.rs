#![no_main]
use injectdrop::experiment::ExperimentReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = ExperimentReport::from_json(text) {
        let again = ExperimentReport::from_json(&report.to_json()).expect("re-parse of own output");
        assert_eq!(again.to_json(), report.to_json());
    }
});
