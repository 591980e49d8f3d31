#![no_main]

use geoloc::scene::SceneSequence;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(scene) = SceneSequence::from_json_str(text) {
            let again = SceneSequence::from_json_str(&scene.to_json()).expect("serialized scene parses");
            assert_eq!(again, scene);
        }
    }
});
