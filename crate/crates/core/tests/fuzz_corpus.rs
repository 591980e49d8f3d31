use std::path::PathBuf;

use geoloc::matching::Checkpoint;
use geoloc::scene::{read_mot, write_mot, SceneSequence};
use geoloc::simulator::SimConfig;

const MALFORMED: [&str; 4] = ["truncated.json", "wrong_format.json", "short_row.txt", "invalid.json"];

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn check<T, E: std::fmt::Debug>(target: &str, parse: impl Fn(&str) -> Result<T, E>, round_trip: impl Fn(&T)) {
    for (name, text) in seeds(target) {
        match parse(&text) {
            Ok(v) => {
                assert!(!MALFORMED.contains(&name.as_str()), "{target}/{name} should be rejected");
                round_trip(&v);
            }
            Err(e) => assert!(MALFORMED.contains(&name.as_str()), "{target}/{name}: {e:?}"),
        }
    }
}

#[test]
fn scene_seeds() {
    check("scene_json", SceneSequence::from_json_str, |s| {
        assert_eq!(&SceneSequence::from_json_str(&s.to_json()).unwrap(), s);
    });
}

#[test]
fn mot_seeds() {
    check("mot_csv", read_mot, |rows| {
        let text = write_mot(rows);
        assert_eq!(write_mot(&read_mot(&text).unwrap()), text);
    });
}

#[test]
fn checkpoint_seeds() {
    check("checkpoint", Checkpoint::from_json_str, |ck| {
        let text = serde_json::to_string(ck).unwrap();
        assert_eq!(Checkpoint::from_json_str(&text).unwrap().matcher, ck.matcher);
    });
}

#[test]
fn sim_config_seeds() {
    check("sim_config", SimConfig::from_json_str, |cfg| {
        let text = serde_json::to_string(cfg).unwrap();
        assert_eq!(&SimConfig::from_json_str(&text).unwrap(), cfg);
    });
}
