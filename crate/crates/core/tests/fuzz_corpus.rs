//! Replays the checked-in fuzz seeds through the same entry points.

use std::path::Path;

use zsvid::denoisers::{MixtureModel, MixtureSpec};
use zsvid::harness::cli::parse_config;
use zsvid::harness::config::RunConfig;
use zsvid::harness::io::{decode_mask, decode_pgm, encode_pgm};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out.sort();
    out
}

#[test]
fn pgm_seeds_parse_and_round_trip() {
    for s in seeds("pgm") {
        let px = decode_pgm(&s).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&px)).unwrap(), px);
    }
}

#[test]
fn mask_seeds_parse() {
    for s in seeds("mask") {
        decode_mask(&s).unwrap();
    }
}

#[test]
fn config_seeds_resolve() {
    for s in seeds("run_config") {
        let c = RunConfig::from_json(std::str::from_utf8(&s).unwrap()).unwrap();
        c.to_generation().unwrap();
    }
}

#[test]
fn mixture_seeds_round_trip() {
    for s in seeds("mixture_spec") {
        let spec: MixtureSpec = serde_json::from_slice(&s).unwrap();
        let m = MixtureModel::from_spec(&spec).unwrap();
        assert_eq!(MixtureModel::from_spec(&m.to_spec()).unwrap(), m);
    }
}

#[test]
fn cli_seeds_parse() {
    for s in seeds("cli_args") {
        let text = String::from_utf8(s).unwrap();
        parse_config(std::iter::once("zsvid").chain(text.split('\0'))).unwrap();
    }
}

#[test]
fn hostile_inputs_are_rejected_cleanly() {
    for bytes in [&b"P5\n4294967296 4294967296\n255\n"[..], b"P5\n1 1\n255", b"P5\n-1 1\n255\n\x00", b""] {
        assert!(decode_pgm(bytes).is_err());
    }
    let huge = r#"{"shape": [18446744073709551615, 2, 2], "components": [{"weight": 1.0, "mean": [0.0]}]}"#;
    assert!(MixtureModel::from_spec(&serde_json::from_str(huge).unwrap()).is_err());
    let c = RunConfig::from_json(r#"{"t_mid": 18446744073709551615, "dt": 5}"#).unwrap();
    assert!(c.to_generation().is_err());
}
