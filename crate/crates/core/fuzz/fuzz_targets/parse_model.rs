#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ctd::probes::LinearModel::from_json(text) {
        let again = model.to_json().expect("serialise model");
        ctd::probes::LinearModel::from_json(&again).expect("reparse model");
    }
});
