#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(policy) = ctd::delegation::PolicyArtifact::from_json(text) {
        let again = policy.to_json().expect("serialise policy");
        ctd::delegation::PolicyArtifact::from_json(&again).expect("reparse policy");
    }
});
