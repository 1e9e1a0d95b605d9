//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, and throws arbitrary text at every parser.

use std::fs;
use std::path::PathBuf;

use ctd::calibration::CalibrationResult;
use ctd::config::{Config, ExperimentConfig};
use ctd::dataset::{parse_jsonl, to_jsonl};
use ctd::delegation::PolicyArtifact;
use ctd::harness::{sweep_csv, SweepReport};
use ctd::probes::LinearModel;
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed-"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn jsonl(text: &str) -> bool {
    match parse_jsonl(text) {
        Ok(ex) => {
            assert_eq!(parse_jsonl(&to_jsonl(&ex).unwrap()).unwrap(), ex);
            true
        }
        Err(_) => false,
    }
}

fn config(text: &str) -> bool {
    Config::parse(text).is_ok_and(|c| ExperimentConfig::from_config(&c).is_ok())
}

fn model(text: &str) -> bool {
    LinearModel::from_json(text).is_ok_and(|m| LinearModel::from_json(&m.to_json().unwrap()).is_ok())
}

fn policy(text: &str) -> bool {
    PolicyArtifact::from_json(text).is_ok_and(|p| PolicyArtifact::from_json(&p.to_json().unwrap()).is_ok())
}

fn calibration(text: &str) -> bool {
    CalibrationResult::from_json(text).is_ok_and(|r| CalibrationResult::from_json(&r.to_json().unwrap()).unwrap() == r)
}

fn report(text: &str) -> bool {
    SweepReport::from_json(text).is_ok_and(|r| {
        let _ = sweep_csv(&r);
        SweepReport::from_json(&r.to_json().unwrap()).unwrap() == r
    })
}

#[test]
fn seeds_behave_as_named() {
    let checks: [(&str, fn(&str) -> bool); 6] = [
        ("parse_jsonl", jsonl),
        ("parse_config", config),
        ("parse_model", model),
        ("parse_policy", policy),
        ("parse_calibration", calibration),
        ("parse_report", report),
    ];
    for (target, check) in checks {
        for (name, text) in seeds(target) {
            let expect_ok = !name.starts_with("seed-bad");
            assert_eq!(check(&text), expect_ok, "{target}/{name}");
        }
    }
}

proptest! {
    #[test]
    fn parsers_never_panic(text in "\\PC{0,200}") {
        jsonl(&text);
        config(&text);
        model(&text);
        policy(&text);
        calibration(&text);
        report(&text);
    }

    #[test]
    fn config_lines_never_panic(lines in prop::collection::vec("[a-z._]{1,24} ?= ?[-0-9a-z.,\" ]{0,16}", 0..8)) {
        config(&lines.join("\n"));
    }
}
