#![no_main]
use libfuzzer_sys::fuzz_target;
use optomech::io::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        // Conversion must reject bad physics with an error, never a panic.
        let _ = cfg.system.to_params();
    }
});
