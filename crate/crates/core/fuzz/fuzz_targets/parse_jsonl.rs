#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(examples) = ctd::dataset::parse_jsonl(text) {
        let again = ctd::dataset::to_jsonl(&examples).expect("serialise parsed examples");
        assert_eq!(ctd::dataset::parse_jsonl(&again).expect("reparse"), examples);
    }
});
