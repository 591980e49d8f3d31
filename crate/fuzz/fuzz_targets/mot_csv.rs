#![no_main]

use geoloc::scene::{read_mot, write_mot};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = read_mot(text) {
            let canonical = write_mot(&rows);
            let again = read_mot(&canonical).expect("canonical text parses");
            assert_eq!(write_mot(&again), canonical);
        }
    }
});
