#![no_main]

use dko_core::model::Side;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = dko_core::config::parse_config(text) else { return };
    // Lower obstacles without xi_max trigger a probe run in build; skip those.
    if config.obstacle.side == Side::Upper || config.mesh.xi_max.is_some() {
        config.build().expect("validated config builds");
    }
});
