#![no_main]

use dko_core::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = parse_config(text) else { return };
    let canonical = config.to_canonical();
    let again = parse_config(&canonical).expect("canonical text parses");
    assert_eq!(again.hash(), config.hash());
    assert_eq!(again.to_canonical(), canonical);
});
