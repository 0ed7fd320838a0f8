#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(eps) = dko_core::config::parse_eps_list(text) {
            assert!(eps.iter().all(|e| *e > 0.0 && *e <= 1.0));
            let _ = dko_core::verify::validate_eps_list(&eps);
        }
    }
});
