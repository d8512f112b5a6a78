//! The checked-in fuzz seeds stay valid inputs for their decoders.

use std::path::PathBuf;

use hompinn::config::ExperimentConfig;
use hompinn::io;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("decode_checkpoint") {
        let decoded = io::decode_checkpoint(&bytes);
        if name.starts_with("truncated") {
            assert!(decoded.is_err(), "{name}");
        } else {
            assert_eq!(io::encode_checkpoint(&decoded.unwrap()), bytes, "{name}");
        }
    }
}

#[test]
fn table_seeds() {
    for (name, bytes) in seeds("parse_solution_table") {
        let table = io::parse_solution_table(std::str::from_utf8(&bytes).unwrap());
        assert!(table.is_ok(), "{name}: {table:?}");
    }
}

#[test]
fn observation_and_record_seeds() {
    for (name, bytes) in seeds("read_observations") {
        assert!(io::read_observations(bytes.as_slice()).is_ok(), "{name}");
    }
    for (name, bytes) in seeds("read_record") {
        assert!(io::read_record(bytes.as_slice()).is_ok(), "{name}");
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("experiment_config") {
        let cfg = ExperimentConfig::from_json(std::str::from_utf8(&bytes).unwrap());
        assert!(cfg.and_then(|c| c.resolve()).is_ok(), "{name}");
    }
}
