#![no_main]
use libfuzzer_sys::fuzz_target;
use optomech::io::{decode_frames, encode_frames, RawHeader, HEADER_VERSION};

fuzz_target!(|data: &[u8]| {
    let Some((&sel, body)) = data.split_first() else { return };
    let channels = 1 + (sel % 4) as usize;
    // Low bit of the next selector byte claims a wrong length.
    let claimed = body.len() / (8 * channels) + usize::from(sel & 0x80 != 0);
    let header = RawHeader {
        version: HEADER_VERSION,
        sample_rate_hz: 1.0e6,
        length: claimed,
        channels: (0..channels).map(|k| format!("c{k}")).collect(),
        units: "arb".into(),
        demod_frequency_hz: None,
    };
    match decode_frames(body, &header) {
        Ok(cols) => {
            assert_eq!(body.len(), header.byte_len());
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            assert_eq!(encode_frames(&refs).unwrap(), body);
        }
        Err(_) => assert_ne!(body.len(), header.byte_len()),
    }
});
