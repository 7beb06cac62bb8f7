mod common;

use std::fs;
use std::path::Path;

use probekit::analysis;
use probekit::config::RunConfig;
use probekit::data::{SiteFilter, SiteId};
use probekit::report::{FAILED_MARKER, SUMMARY_HEADER};
use probekit::synth::{write_synth, SynthSpec};

/// Writes a synthetic dataset plus a small run config; returns the config.
fn setup(dir: &Path, spec: &SynthSpec, extra: &str) -> RunConfig {
    write_synth(spec, dir).unwrap();
    let text = format!(
        r#"
store = "store"
ratings = "ratings.csv"
output = "out"
[permutations]
count = 50
seed = 1
[grids.clip]
alphas = [1.0, 10.0]
components = [4, 8]
[grids.unet_bottleneck]
alphas = [1.0]
components = [4]
[grids.unet_output]
alphas = [1.0]
components = [4]
{extra}
"#
    );
    fs::write(dir.join("run.toml"), text).unwrap();
    RunConfig::load(dir.join("run.toml")).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn probe_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), &SynthSpec::default(), "");
    let outcome = analysis::probe(&config, None).unwrap();
    let summary = fs::read_to_string(outcome.output.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(lines.count(), 8);
    assert!(outcome.output.join("run_metadata.json").exists());
    assert!(outcome.output.join("results.csv").exists());
    assert!(!outcome.output.join(FAILED_MARKER).exists());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outcome.output.join("run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "complete");
    assert_eq!(meta["command"], "probe");

    let first = csv_files(&outcome.output);
    analysis::probe(&config, None).unwrap();
    assert_eq!(first, csv_files(&outcome.output));
}

#[test]
fn site_filter_selects_hidden_layers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_stimuli: 30,
        sites: vec!["clip_hidden:1..12".into(), "clip_final".into(), "unet_output:1".into()],
        d: 8,
        ..SynthSpec::default()
    };
    let config = setup(dir.path(), &spec, "");
    let filters = vec!["clip_hidden:1..12".parse::<SiteFilter>().unwrap()];
    let outcome = analysis::probe(&config, Some(&filters)).unwrap();
    let summary = fs::read_to_string(outcome.output.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.starts_with("clip_hidden:")));
    assert_eq!(outcome.run.completed_sites, (1..=12).map(SiteId::clip_hidden).collect::<Vec<_>>());
}

#[test]
fn subgroups_report_group_and_complement() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { m_attributes: 40, null_attributes: 4, sites: vec!["clip_final".into()], ..SynthSpec::default() };
    let config = setup(dir.path(), &spec, "");
    let list = dir.path().join("first.txt");
    let questions: Vec<String> = (0..5).map(|j| config_question(dir.path(), j)).collect();
    fs::write(&list, questions.join("\n")).unwrap();
    let groups = vec![list.to_string_lossy().into_owned()];
    let summaries = analysis::subgroups(&config, &groups, None).unwrap();
    let names: Vec<String> = summaries.iter().filter_map(|s| s.subgroup.clone()).collect();
    assert_eq!(names, vec!["first".to_string(), "not_first".to_string()]);
    assert_eq!(summaries[0].n_attributes, 5);
    assert_eq!(summaries[1].n_attributes, 35);
    let text = fs::read_to_string(config.output.join("subgroups.csv")).unwrap();
    assert!(text.contains("not_first"));
}

fn config_question(dir: &Path, j: usize) -> String {
    let table = probekit::data::load_ratings(dir.join("ratings.csv")).unwrap();
    table.attributes()[j].question.clone()
}

#[test]
fn failure_leaves_marker_and_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { sites: vec!["clip_final".into(), "unet_output:1".into()], ..SynthSpec::default() };
    let config = setup(dir.path(), &spec, "");
    let store = probekit::data::Store::open(&config.store).unwrap();
    let entry = store.manifest().sites.iter().find(|e| e.site == SiteId::unet_output(1)).unwrap().clone();
    let path = config.store.join(&entry.file);
    let mut bytes = fs::read(&path).unwrap();
    bytes[40] ^= 1;
    fs::write(&path, bytes).unwrap();

    let Err(err) = analysis::probe(&config, None) else { panic!("probe should fail") };
    assert!(err.to_string().contains("unet_output:1"), "{err}");
    assert!(config.output.join(FAILED_MARKER).exists());
    let summary = fs::read_to_string(config.output.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("clip_final:0,clip_final,0,"));
    let meta = fs::read_to_string(config.output.join("run_metadata.json")).unwrap();
    assert!(meta.contains("\"failed\""));
}

#[test]
fn entangle_writes_cross_domain_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { sites: vec!["clip_final".into()], ..SynthSpec::default() };
    let config = setup(dir.path(), &spec, "");
    let outcome = analysis::entangle(&config).unwrap();
    assert_eq!(outcome.per_site.len(), 1);
    let (_, folds, mean) = &outcome.per_site[0];
    assert_eq!(folds.len(), 5);
    let total = mean.pct_agreement + mean.pct_humans_disentangle_more + mean.pct_probes_disentangle_more;
    assert!((total - 100.0).abs() < 1e-9);
    let text = fs::read_to_string(config.output.join("entangle_summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(config.output.join("entanglement.csv").exists());
}
