mod common;

use std::fs;

use common::{s, toy_run, tree, vgan, vgan_ok, write_config};
use vgan::dataset::read_manifest;
use vgan::run::{RunConfig, RunManifest, RunStatus};
use vgan::volume::{inspect_volume, load_labels};

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vgan(&[]).status.code(), Some(2));
    assert_eq!(vgan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vgan(&["train", "--preset", "huge", "--out", "x"]).status.code(), Some(2));
    assert_eq!(vgan(&["gradcheck", "no_such_op"]).status.code(), Some(2));
    assert_eq!(vgan(&["synth", "--out", "x", "--extents", "8,8"]).status.code(), Some(2));
    assert_eq!(vgan(&["synth", "--out", "x", "--extents", "8,8,8"]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.vvol");
    let out = vgan(&["export-slices", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.vvol"));
}

#[test]
fn shipped_desk_config_matches_the_preset() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.json");
    let shipped: RunConfig = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(shipped, RunConfig::desk());
    let printed = vgan_ok(&["train", "--preset", "desk", "--print-defaults"]);
    assert_eq!(printed, RunConfig::desk().to_json());
}

#[test]
fn synth_is_reproducible_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        vgan_ok(&["synth", "--out", s(d), "--count", "5", "--seed", "3", "--extents", "16,18,20"]);
    }
    assert_eq!(tree(&a), tree(&b));
    let entries = read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(entries.len(), 5);
    assert_eq!(entries.iter().filter(|e| e.grade == vgan_core::data::Grade::Hgg).count(), 4);
    let header = inspect_volume(&a.join(&entries[0].image)).unwrap();
    assert_eq!((header.channels, header.extents), (4, [16, 18, 20]));
}

/// synth → train → infer → eval → export-slices at toy scale.
#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    vgan_ok(&["synth", "--out", s(&data), "--count", "3", "--seed", "1", "--extents", "16,16,16", "--grade-ratio", "2:1"]);

    let config = root.join("toy.json");
    write_config(&config, &toy_run(5, 3));
    let run = root.join("run");
    vgan_ok(&["train", "--config", s(&config), "--out", s(&run), "--data", s(&data.join("manifest.json"))]);
    let manifest = RunManifest::load(&run.join("run.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.summary.as_ref().unwrap().steps, 3);
    assert!(!manifest.checkpoints.is_empty());
    let log = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3);

    let pred = root.join("pred");
    vgan_ok(&["infer", "--checkpoint", s(&run), "--out", s(&pred), "--probabilities", "--slices", s(&data.join("images"))]);
    let gt = data.join("labels");
    for e in read_manifest(&data.join("manifest.json")).unwrap() {
        let name = std::path::Path::new(&e.image).file_name().unwrap().to_owned();
        let p = load_labels(&pred.join(&name)).unwrap();
        assert_eq!(p.extents(), [16, 16, 16]);
        assert!(p.data().iter().all(|&l| matches!(l, 0 | 1 | 2 | 4)));
        let stem = std::path::Path::new(&name).file_stem().unwrap().to_string_lossy().into_owned();
        assert_eq!(inspect_volume(&pred.join(format!("{stem}.probs.vvol"))).unwrap().channels, 3);
        assert!(pred.join(format!("{stem}_axis0_0008.ppm")).is_file());
    }

    // Ground truth scored against itself is perfect.
    let csv = vgan_ok(&["eval", "--pred", s(&gt), "--gt", s(&gt)]);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let dice = header.iter().position(|&c| c == "dice").unwrap();
    for row in csv.lines().skip(1) {
        assert_eq!(row.split(',').nth(dice), Some("1.000000"), "{row}");
    }
    let scores = root.join("scores.csv");
    vgan_ok(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&scores)]);
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 1 + 3 * 3 + 3);

    let slices = root.join("slices");
    let first = fs::read_dir(data.join("images")).unwrap().next().unwrap().unwrap().path();
    let written = vgan_ok(&["export-slices", s(&first), "--out", s(&slices), "--axis", "2", "--indices", "0,15", "--channel", "3"]);
    assert_eq!(written.lines().count(), 2);
    let ppm = fs::read(written.lines().next().unwrap()).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
}
