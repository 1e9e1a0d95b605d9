#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(result) = ctd::calibration::CalibrationResult::from_json(text) {
        let again = result.to_json().expect("serialise calibration");
        ctd::calibration::CalibrationResult::from_json(&again).expect("reparse calibration");
    }
});
