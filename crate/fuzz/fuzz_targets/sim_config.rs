#![no_main]

use geoloc::simulator::{generate_scene, SimConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = SimConfig::from_json_str(text) {
            if cfg.n_frames <= 8 && cfg.n_objects <= 8 {
                let _ = generate_scene(&cfg);
            }
        }
    }
});
