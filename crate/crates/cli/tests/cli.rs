use std::path::Path;
use std::process::{Command, Output};

use anatomesh::template::template;
use anatomesh::AnatomyMesh;

fn anatomesh(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anatomesh"))
        .arg("-q")
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_fails_with_one_line_naming_stage_and_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = anatomesh(&["train", "-c", "nowhere.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: train: config: nowhere.toml"), "{err}");
}

#[test]
fn missing_stage_input_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = anatomesh(&["classify", "-o", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: classify:") && err.contains("prototype.obj"), "{err}");
}

#[test]
fn bad_values_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for set in ["train.epochs=abc", "train.epoch=3", "val_fraction=1.0", "region_counts=[48,42,45,20]"] {
        let o = anatomesh(&["synth-gen", "--set", set], tmp.path());
        assert_eq!(o.status.code(), Some(1), "{set}");
        assert!(stderr(&o).starts_with("error: synth-gen: config:"), "{set}: {}", stderr(&o));
    }
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn exported_template_round_trips_to_nine_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = anatomesh(&["export-mesh", "--mesh", "template", "--output", "t.obj"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let back = AnatomyMesh::load_obj(tmp.path().join("t.obj")).unwrap();
    let t = template();
    assert!(back.same_combinatorics(t));
    for (a, b) in back.vertices.iter().zip(&t.vertices) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 1e-8 * b[c].abs().max(1e-300), "{} vs {}", a[c], b[c]);
        }
    }
    let csv = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("vertex,x,y,z,region"));
    assert_eq!(csv.lines().count(), t.vertex_count() + 1);
}

#[test]
fn out_dir_resolves_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("cfg")).unwrap();
    std::fs::write(tmp.path().join("cfg/run.toml"), "out_dir = \"result\"\nn_train = 2\nn_test = 1\n").unwrap();
    let o = anatomesh(&["synth-gen", "-c", "cfg/run.toml"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("cfg/result");
    assert!(run.join("cases/00002/probs.raw").exists());
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("[synth-gen]\nconfig_sha256 "));
    assert!(manifest.contains("output cases/00000/labels.hdr "));
    // --out wins over the file
    let o = anatomesh(&["synth-gen", "-c", "cfg/run.toml", "-o", "elsewhere"], tmp.path());
    assert!(o.status.success());
    assert!(tmp.path().join("elsewhere/cases/00000/case.txt").exists());
}

const STAGES: [&str; 8] =
    ["synth-gen", "build-prototype", "fit-mesh", "render-zones", "pool-features", "train", "classify", "eval"];

#[test]
fn chained_stages_match_pipeline_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "n_train = 24\nn_test = 8\n[synth]\nseed = 5\n[train]\nepochs = 3\n";
    std::fs::write(tmp.path().join("small.toml"), cfg).unwrap();
    for stage in STAGES {
        let o = anatomesh(&[stage, "-c", "small.toml", "-o", "staged"], tmp.path());
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = anatomesh(&["pipeline", "-c", "small.toml", "-o", "whole"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("global classification"));

    let (staged, whole) = (tmp.path().join("staged"), tmp.path().join("whole"));
    let mut compared = 0;
    for entry in std::fs::read_dir(&whole).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.txt" {
            continue;
        }
        let a = std::fs::read(whole.join(&name)).unwrap();
        let b = std::fs::read(staged.join(&name)).unwrap_or_else(|_| panic!("staged run lacks {name:?}"));
        assert!(a == b, "{name:?} differs");
        compared += 1;
    }
    assert!(compared >= 10);

    let manifest = std::fs::read_to_string(staged.join("manifest.txt")).unwrap();
    let sections: Vec<&str> = manifest.lines().filter(|l| l.starts_with('[')).collect();
    let want: Vec<String> = STAGES.iter().map(|s| format!("[{s}]")).collect();
    assert_eq!(sections, want);
    let hashes: Vec<&str> = manifest.lines().filter(|l| l.starts_with("config_sha256")).collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}
