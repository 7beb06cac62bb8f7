//! End-to-end analyses driven by a [`RunConfig`]: probing, subgroup
//! summaries and entanglement, each writing a self-describing report
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::cv::{aggregate, compare_sites, run_probes_partial, ProbeRun, SiteSummary, Targets};
use crate::data::{load_ratings, RatingTable, SiteFilter, SiteId, Store, SubgroupDef};
use crate::entangle::{
    average_summaries, common_pairs, cross_domain, entangle_probes, entangle_ratings, CrossDomainSummary,
    EntanglementSet,
};
use crate::error::{Error, Result};
use crate::report::{self, ReportDir, Series, REPORT_SCHEMA_VERSION};
use crate::stats::RNG_DESCRIPTION;

/// Analysis choices recorded in every run's metadata.
pub const DECISIONS: &[&str] = &[
    "outer folds group all noise samples of a stimulus together",
    "fold assignment: stimuli sorted by text, then shuffled by the fold seed",
    "one (alpha, q) per site group and outer fold, searched on every grid_site_stride-th site of U-Net groups",
    "grid ties resolve to the smaller q, then the smaller alpha",
    "PCA and z-score (population std) fitted on training rows only",
    "per-sample RMSE on U-Net sites; seed-averaged RMSE reported as rmse_stimulus_mean",
    "RMSE permutation tests permute stimuli, keeping each stimulus's noise samples together",
    "independent permutations per test, seeded from the base seed and the test identity",
    "se_rmse is over (attribute, fold) results; se_rmse_attributes is over per-attribute means",
    "model-domain entanglement uses each outer fold's probe weights; percentages averaged over folds",
    "human-domain entanglement uses every stimulus of the rating table",
    "cross-domain agreement includes pairs entangled with opposite signs, also reported as pct_sign_mismatch",
];

pub struct Inputs {
    pub store: Store,
    pub ratings: RatingTable,
    pub targets: Targets,
    pub sites: Vec<SiteId>,
}

/// Resolves attribute selectors (column ids or questions) to ids.
pub fn resolve_attributes(selectors: &[String], table: &RatingTable) -> Result<Vec<usize>> {
    let mut ids = Vec::with_capacity(selectors.len());
    for (i, s) in selectors.iter().enumerate() {
        let id = match s.parse::<usize>() {
            Ok(id) if id < table.m() => id,
            Ok(id) => return Err(Error::config(format!("attributes[{i}]"), format!("attribute id {id} out of range"))),
            Err(_) => table
                .attribute_by_question(s)
                .ok_or_else(|| Error::config(format!("attributes[{i}]"), format!("no attribute {s:?} in the ratings")))?
                .id,
        };
        ids.push(id);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub fn select_sites(store: &Store, filters: &[SiteFilter]) -> Vec<SiteId> {
    store
        .manifest()
        .site_ids()
        .into_iter()
        .filter(|s| SiteFilter::any_matches(filters, s))
        .collect()
}

pub fn load_inputs(config: &RunConfig, site_filters: &[SiteFilter]) -> Result<Inputs> {
    let store = Store::open(&config.store)?;
    let ratings = load_ratings(&config.ratings)?;
    let attributes = config
        .attributes
        .as_deref()
        .map(|a| resolve_attributes(a, &ratings))
        .transpose()?;
    let targets = Targets::align(&store, &ratings, attributes.as_deref())?;
    let sites = select_sites(&store, site_filters);
    if sites.is_empty() {
        return Err(Error::config("sites", "no site of the store matches the site filters"));
    }
    Ok(Inputs { store, ratings, targets, sites })
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    report_schema_version: u32,
    status: &'a str,
    error: Option<String>,
    config: &'a RunConfig,
    sites: Vec<String>,
    attributes: Vec<usize>,
    completed_sites: Vec<String>,
    permutation_rng: &'static str,
    decisions: &'static [&'static str],
    store_metadata: &'a BTreeMap<String, serde_json::Value>,
    extra: serde_json::Value,
}

fn write_metadata(
    report: &ReportDir,
    command: &str,
    config: &RunConfig,
    inputs: &Inputs,
    run: &ProbeRun,
    error: Option<&Error>,
    extra: serde_json::Value,
) -> Result<PathBuf> {
    report.json(
        "run_metadata.json",
        &Metadata {
            tool: "probekit",
            version: env!("CARGO_PKG_VERSION"),
            command,
            report_schema_version: REPORT_SCHEMA_VERSION,
            status: if error.is_some() { "failed" } else { "complete" },
            error: error.map(|e| e.to_string()),
            config,
            sites: inputs.sites.iter().map(ToString::to_string).collect(),
            attributes: inputs.targets.attribute_ids.clone(),
            completed_sites: run.completed_sites.iter().map(ToString::to_string).collect(),
            permutation_rng: RNG_DESCRIPTION,
            decisions: DECISIONS,
            store_metadata: &inputs.store.manifest().metadata,
            extra,
        },
    )
}

fn question_lookup(ratings: &RatingTable) -> impl Fn(usize) -> String + '_ {
    move |id| ratings.attributes().get(id).map(|a| a.question.clone()).unwrap_or_default()
}

/// Writes whatever part of a probe run exists. Returns the site summaries
/// (empty when nothing completed).
fn write_probe_files(report: &ReportDir, config: &RunConfig, inputs: &Inputs, run: &ProbeRun) -> Result<Vec<SiteSummary>> {
    let questions = question_lookup(&inputs.ratings);
    report::write_results(report, &run.records, &questions)?;
    report::write_selections(report, &run.selections)?;
    if config.pipeline.keep_predictions {
        report::write_predictions(report, &run.records)?;
    }
    if config.write_models {
        let dir = report.path("models");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for m in &run.models {
            m.write(dir.join(format!("{}_fold{}.bin", m.site.file_stem(), m.fold)))?;
        }
    }
    if run.records.is_empty() {
        report::write_summaries(report, &[])?;
        return Ok(Vec::new());
    }
    let summaries = aggregate(&run.records, None)?;
    report::write_summaries(report, &summaries)?;
    report::write_plots(
        report,
        &[Series { name: "all".into(), points: summaries.clone() }],
        "plot",
        config.svg,
    )?;
    if let Some(reference) = config.reference_site {
        let mut comparisons = Vec::new();
        for s in &run.completed_sites {
            if *s != reference && run.completed_sites.contains(&reference) {
                match compare_sites(&run.records, reference, *s) {
                    Ok(c) => comparisons.push(c),
                    Err(e) => log::warn!("paired t-test {reference} vs {s} skipped: {e}"),
                }
            }
        }
        report::write_comparisons(report, &comparisons)?;
    }
    Ok(summaries)
}

pub struct ProbeOutcome {
    pub output: PathBuf,
    pub run: ProbeRun,
    pub summaries: Vec<SiteSummary>,
}

/// `probe`: nested CV over the configured sites. On failure the finished
/// part is written along with a FAILED marker and the error returned.
pub fn probe(config: &RunConfig, site_filters: Option<&[SiteFilter]>) -> Result<ProbeOutcome> {
    let filters = site_filters.unwrap_or(&config.sites);
    let inputs = load_inputs(config, filters)?;
    let report = ReportDir::create(&config.output)?;
    let (run, error) = run_probes_partial(&inputs.store, &inputs.targets, &inputs.sites, &config.pipeline);
    let written = write_probe_files(&report, config, &inputs, &run);
    write_metadata(&report, "probe", config, &inputs, &run, error.as_ref(), serde_json::Value::Null)?;
    if let Some(e) = error {
        report.mark_failed(&e)?;
        return Err(e);
    }
    let summaries = written?;
    Ok(ProbeOutcome { output: config.output.clone(), run, summaries })
}

/// Resolves a group given by bundled name or by a file of questions.
pub fn resolve_group(spec: &str, table: &RatingTable) -> Result<SubgroupDef> {
    let path = Path::new(spec);
    let resolved = if path.is_file() {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
        SubgroupDef::from_file(&name, path, table)?
    } else {
        SubgroupDef::bundled(spec, table)?
    };
    if !resolved.unmatched.is_empty() {
        log::info!(
            "group {}: {} listed questions not in the ratings",
            resolved.group.name,
            resolved.unmatched.len()
        );
    }
    if resolved.group.members.is_empty() {
        return Err(Error::Subgroup(format!("group {spec} matches no attribute of the ratings")));
    }
    Ok(resolved.group)
}

/// `subgroups`: per-site summaries restricted to each group and to its
/// complement.
pub fn subgroups(config: &RunConfig, groups: &[String], site_filters: Option<&[SiteFilter]>) -> Result<Vec<SiteSummary>> {
    let filters = site_filters.unwrap_or(&config.sites);
    let inputs = load_inputs(config, filters)?;
    let groups: Vec<String> = if groups.is_empty() { config.subgroups.clone() } else { groups.to_vec() };
    let mut defs = Vec::new();
    for g in &groups {
        let def = resolve_group(g, &inputs.ratings)?;
        let mut complement = def.complement(inputs.ratings.m());
        complement.name = format!("not_{}", def.name);
        defs.push(def);
        defs.push(complement);
    }
    let report = ReportDir::create(&config.output)?;
    let (run, error) = run_probes_partial(&inputs.store, &inputs.targets, &inputs.sites, &config.pipeline);
    let mut all = Vec::new();
    let mut series = Vec::new();
    if !run.records.is_empty() {
        for def in &defs {
            match aggregate(&run.records, Some(def)) {
                Ok(s) => {
                    series.push(Series { name: def.name.clone(), points: s.clone() });
                    all.extend(s);
                }
                Err(e) => log::warn!("group {}: {e}", def.name),
            }
        }
    }
    report::write_detail(&report, "subgroups.csv", &all)?;
    report::write_plots(&report, &series, "subgroups", config.svg)?;
    let members: BTreeMap<String, Vec<usize>> = defs.iter().map(|d| (d.name.clone(), d.members.clone())).collect();
    write_metadata(
        &report,
        "subgroups",
        config,
        &inputs,
        &run,
        error.as_ref(),
        serde_json::json!({ "groups": members }),
    )?;
    if let Some(e) = error {
        report.mark_failed(&e)?;
        return Err(e);
    }
    Ok(all)
}

pub struct EntangleOutcome {
    pub human: EntanglementSet,
    /// Per site: per-fold summaries and their mean.
    pub per_site: Vec<(SiteId, Vec<CrossDomainSummary>, CrossDomainSummary)>,
}

/// `entangle`: human-domain and per-fold model-domain entanglement with the
/// cross-domain comparison for each site.
pub fn entangle(config: &RunConfig) -> Result<EntangleOutcome> {
    let filters = if config.entangle_sites.is_empty() { &config.sites } else { &config.entangle_sites };
    let inputs = load_inputs(config, filters)?;
    let report = ReportDir::create(&config.output)?;
    let mut pipeline = config.pipeline.clone();
    pipeline.keep_models = true;
    let (run, error) = run_probes_partial(&inputs.store, &inputs.targets, &inputs.sites, &pipeline);
    let outcome = entangle_from_run(config, &inputs, &run, &report);
    let outcome = match error {
        Some(e) => Err(e),
        None => outcome,
    };
    write_metadata(&report, "entangle", config, &inputs, &run, outcome.as_ref().err(), serde_json::Value::Null)?;
    if let Err(e) = &outcome {
        report.mark_failed(e)?;
    }
    outcome
}

fn entangle_from_run(config: &RunConfig, inputs: &Inputs, run: &ProbeRun, report: &ReportDir) -> Result<EntangleOutcome> {
    let ids = &inputs.targets.attribute_ids;
    let columns: Vec<Vec<f64>> = ids.iter().map(|&j| inputs.ratings.column(j)).collect();
    let plan = config.pipeline.permutations;
    let human = entangle_ratings(ids, &columns, &plan)?;
    let mut sets: Vec<(String, Option<usize>, EntanglementSet)> = vec![("ratings".into(), None, human.clone())];
    let mut rows = Vec::new();
    let mut per_site = Vec::new();
    for site in &run.completed_sites {
        let mut folds = Vec::new();
        for set in run.models.iter().filter(|m| m.site == *site) {
            let model = entangle_probes(set, &plan)?;
            let m = common_pairs(&model, &human);
            let h = common_pairs(&human, &model);
            let summary = cross_domain(&m, &h).map_err(|e| e.context(format!("site {site}, fold {}", set.fold)))?;
            rows.push((site.to_string(), Some(set.fold), summary));
            folds.push(summary);
            sets.push((site.to_string(), Some(set.fold), model));
        }
        let mean = average_summaries(&folds)?;
        rows.push((site.to_string(), None, mean));
        per_site.push((*site, folds, mean));
    }
    let questions = question_lookup(&inputs.ratings);
    let borrowed: Vec<(String, Option<usize>, &EntanglementSet)> =
        sets.iter().map(|(s, f, e)| (s.clone(), *f, e)).collect();
    report::write_entanglement(report, "entanglement.csv", &borrowed, &questions)?;
    report::write_cross_domain(report, &rows)?;
    Ok(EntangleOutcome { human, per_site })
}
