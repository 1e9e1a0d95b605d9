#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = ctd::harness::SweepReport::from_json(text) {
        let _ = ctd::harness::sweep_csv(&report);
        let again = report.to_json().expect("serialise report");
        ctd::harness::SweepReport::from_json(&again).expect("reparse report");
    }
});
