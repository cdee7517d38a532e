//! Replays the checked-in fuzz seeds through the properties the fuzz
//! targets assert, so they are exercised on stable toolchains too.

use std::path::PathBuf;

use cunet::audio::decode_wav;
use cunet::config::ExperimentConfig;
use cunet::evaluation::{parse_results_csv, write_results_csv};
use cunet::training::{parse_checkpoint, Manifest};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn wav_seeds_decode() {
    for (name, bytes) in seeds("wav_decode") {
        let sig = decode_wav(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(sig.sample_rate > 0 && !sig.is_empty(), "{name}");
        assert!(sig.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0), "{name}");
    }
}

#[test]
fn checkpoint_seeds_are_canonical() {
    for (name, bytes) in seeds("checkpoint_parse") {
        let c = parse_checkpoint(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(c.to_bytes() == bytes, "{name}");
    }
}

#[test]
fn manifest_seeds_round_trip() {
    for (name, bytes) in seeds("manifest_parse") {
        let m = Manifest::parse(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m, "{name}");
    }
}

#[test]
fn config_seeds_round_trip() {
    for (name, bytes) in seeds("config_parse") {
        let cfg = ExperimentConfig::from_toml_str(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap().to_toml_string(), text, "{name}");
    }
}

#[test]
fn results_seeds_round_trip() {
    for (name, bytes) in seeds("results_csv_parse") {
        let rows = parse_results_csv(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_results_csv(&write_results_csv(&rows).unwrap()).unwrap();
        assert_eq!(again.len(), rows.len(), "{name}");
        for (a, b) in again.iter().zip(&rows) {
            assert_eq!((&a.track_id, &a.task), (&b.track_id, &b.task));
            assert_eq!(a.values().map(f64::to_bits), b.values().map(f64::to_bits), "{name}");
        }
    }
}
