#![no_main]
use libfuzzer_sys::fuzz_target;
use optomech::io::{parse_psd_csv, psd_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((psd, units)) = parse_psd_csv(text) {
        assert!(psd.freqs.windows(2).all(|w| w[1] > w[0]));
        if !units.contains(',') && !units.contains('"') && !units.contains('\n') {
            let (back, u) = parse_psd_csv(&psd_to_csv(&psd, &units)).expect("written PSD parses");
            assert_eq!(u, units);
            assert_eq!(back.values, psd.values);
        }
    }
});
