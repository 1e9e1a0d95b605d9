#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ctd::config::Config::parse(text) {
        let _ = ctd::config::ExperimentConfig::from_config(&config);
    }
});
