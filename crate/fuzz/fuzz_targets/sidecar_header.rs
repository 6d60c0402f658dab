#![no_main]
use libfuzzer_sys::fuzz_target;
use optomech::io::{header_to_string, parse_header};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = parse_header(text) {
        let again = parse_header(&header_to_string(&h)).expect("serialized header parses");
        assert_eq!(h, again);
    }
});
