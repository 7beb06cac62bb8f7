use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn probekit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn probekit")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

/// Generates a small synthetic dataset and writes a fast run config next to it.
fn synth_fixture(dir: &Path) {
    fs::write(
        dir.join("spec.toml"),
        "n_stimuli = 40\nsites = [\"clip_hidden:1..2\", \"clip_final\", \"unet_output:1\"]\nd = 8\nm_attributes = 6\nnull_attributes = 1\n",
    )
    .unwrap();
    let out = probekit(&["synth", "--spec", "spec.toml", "--out", "data"], dir);
    assert!(out.status.success(), "{}", text(&out));
    fs::write(
        dir.join("run.toml"),
        r#"
store = "data/store"
ratings = "data/ratings.csv"
output = "results"
[permutations]
count = 30
[grids.clip]
alphas = [1.0, 10.0]
components = [2, 4]
[grids.unet_bottleneck]
alphas = [1.0]
components = [2]
[grids.unet_output]
alphas = [1.0]
components = [2]
"#,
    )
    .unwrap();
}

#[test]
fn default_synth_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = probekit(&["synth", "--spec", "default", "--out", "s"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(dir.path().join("s/ratings.csv").exists());
    assert!(dir.path().join("s/truth.json").exists());
    let out = probekit(&["inspect", "s/store"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("clip_final:0"));
    assert!(stdout.contains("8 sites"), "{stdout}");
}

#[test]
fn inspect_reports_corrupt_site() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let blob = fs::read_dir(dir.path().join("data/store"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("unet_output"))
        .unwrap();
    let mut bytes = fs::read(&blob).unwrap();
    bytes[30] ^= 0x01;
    fs::write(&blob, bytes).unwrap();
    let out = probekit(&["inspect", "data/store"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("unet_output:1"), "{}", text(&out));
}

#[test]
fn inspect_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = probekit::data::StoreManifest::new(probekit::data::Stimulus::from_texts(["bear"]), vec![0]);
    probekit::data::write_store(dir.path().join("empty"), &manifest, vec![]).unwrap();
    let out = probekit(&["inspect", "empty"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 sites"));
}

#[test]
fn probe_entangle_and_subgroups() {
    let dir = tempfile::tempdir().unwrap();
    synth_fixture(dir.path());
    let out = probekit(&["probe", "--config", "run.toml"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let summary = fs::read_to_string(dir.path().join("results/summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "site,kind,index,mean_rmse,se_rmse,pct_significant");
    assert_eq!(summary.lines().count(), 5);

    let out = probekit(&["probe", "--config", "run.toml", "--sites", "clip_hidden:1..2", "--output", "hidden"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let summary = fs::read_to_string(dir.path().join("hidden/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let out = probekit(&["entangle", "--config", "run.toml", "--output", "ent"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(dir.path().join("ent/entangle_summary.csv").exists());

    let ratings = probekit::data::load_ratings(dir.path().join("data/ratings.csv")).unwrap();
    fs::write(dir.path().join("pair.txt"), format!("{}\n{}\n", ratings.attributes()[0].question, ratings.attributes()[1].question)).unwrap();
    let out = probekit(&["subgroups", "--config", "run.toml", "--group", "pair.txt", "--output", "sub"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let csv = fs::read_to_string(dir.path().join("sub/subgroups.csv")).unwrap();
    assert!(csv.contains("not_pair"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage and configuration problems
    assert_eq!(probekit(&["probe"], dir.path()).status.code(), Some(1));
    assert_eq!(probekit(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(probekit(&["probe", "--config", "missing.toml"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("bad.toml"), "store = 3\n").unwrap();
    let out = probekit(&["probe", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("store"), "{}", text(&out));
    assert_eq!(probekit(&["--help"], dir.path()).status.code(), Some(0));
    // data problems
    assert_eq!(probekit(&["inspect", "nowhere"], dir.path()).status.code(), Some(2));

    synth_fixture(dir.path());
    let blob = fs::read_dir(dir.path().join("data/store"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("clip_final"))
        .unwrap();
    fs::remove_file(blob).unwrap();
    let out = probekit(&["probe", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("FAILED"));
    assert!(dir.path().join("results/FAILED").exists());
}
