//! Replays the checked-in fuzz corpus through the fuzz-target checks.

use optomech::io::{decode_frames, encode_frames, header_to_string, parse_config, parse_header, parse_psd_csv, psd_to_csv, RawHeader, HEADER_VERSION};
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|f| std::fs::read(f).unwrap()).collect()
}

#[test]
fn config_json_seeds() {
    let mut accepted = 0;
    for s in seeds("config_json") {
        if let Ok(cfg) = parse_config(std::str::from_utf8(&s).unwrap()) {
            accepted += cfg.system.to_params().is_ok() as usize;
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn sidecar_header_seeds() {
    for s in seeds("sidecar_header") {
        if let Ok(h) = parse_header(std::str::from_utf8(&s).unwrap()) {
            assert_eq!(parse_header(&header_to_string(&h)).unwrap(), h);
        }
    }
}

#[test]
fn raw_decode_seeds() {
    for s in seeds("raw_decode") {
        let (&sel, body) = s.split_first().unwrap();
        let channels = 1 + (sel % 4) as usize;
        let header = RawHeader {
            version: HEADER_VERSION,
            sample_rate_hz: 1.0e6,
            length: body.len() / (8 * channels) + usize::from(sel & 0x80 != 0),
            channels: (0..channels).map(|k| format!("c{k}")).collect(),
            units: "arb".into(),
            demod_frequency_hz: None,
        };
        match decode_frames(body, &header) {
            Ok(cols) => {
                let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
                assert_eq!(encode_frames(&refs).unwrap(), body);
            }
            Err(_) => assert_ne!(body.len(), header.byte_len()),
        }
    }
}

#[test]
fn psd_csv_seeds() {
    for s in seeds("psd_csv") {
        if let Ok((psd, units)) = parse_psd_csv(std::str::from_utf8(&s).unwrap()) {
            let (back, u) = parse_psd_csv(&psd_to_csv(&psd, &units)).unwrap();
            assert_eq!((back.values, u), (psd.values, units));
        }
    }
}
