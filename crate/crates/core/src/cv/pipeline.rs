//! Nested cross-validation over sites, attributes and outer folds.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{SiteData, Targets};
use super::folds::{make_folds, FoldSpec};
use super::grid::{feasible_q, grid_search, search_subset, GridConfig, Selection};
use crate::data::{SiteGroup, SiteId, Store};
use crate::error::{Error, Result};
use crate::preprocess::{PcaMethod, Preprocessor};
use crate::probe::{rmse, AttributeWeights, ProbeResult, ProbeSet, RidgeSystem};
use crate::stats::{perm_test_rmse_grouped, PermutationPlan, SIGNIFICANCE_LEVEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub outer_folds: usize,
    pub fold_seed: u64,
    pub permutations: PermutationPlan,
    pub grids: BTreeMap<SiteGroup, GridConfig>,
    /// Search every `grid_site_stride`-th site of a U-Net group.
    pub grid_site_stride: usize,
    pub pca_method: PcaMethod,
    pub keep_predictions: bool,
    pub keep_models: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            outer_folds: 5,
            fold_seed: 0,
            permutations: PermutationPlan::default(),
            grids: SiteGroup::ALL.iter().map(|g| (*g, GridConfig::default_for(*g))).collect(),
            grid_site_stride: 10,
            pca_method: PcaMethod::Auto,
            keep_predictions: false,
            keep_models: false,
        }
    }
}

impl PipelineConfig {
    pub fn grid(&self, group: SiteGroup) -> GridConfig {
        self.grids
            .get(&group)
            .cloned()
            .unwrap_or_else(|| GridConfig::default_for(group))
    }

    /// Stride applied when choosing the sites a group's search runs on.
    /// Text-encoder layers are all searched.
    pub fn stride_for(&self, group: SiteGroup) -> usize {
        match group {
            SiteGroup::Clip => 1,
            _ => self.grid_site_stride,
        }
    }
}

/// One held-out evaluation with its identifying context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub site: SiteId,
    pub attribute_id: usize,
    pub alpha: f64,
    /// Component count actually used (after clipping to what the fit supports).
    pub q: usize,
    /// RMSE of seed-averaged predictions against per-stimulus ratings.
    pub rmse_stimulus_mean: f64,
    /// Training target was constant; the probe predicts that constant.
    pub degenerate: bool,
    pub n_test_rows: usize,
    pub result: ProbeResult,
}

impl ProbeRecord {
    pub fn fold(&self) -> usize {
        self.result.fold_id
    }

    pub fn significant(&self) -> bool {
        self.result.p_value < SIGNIFICANCE_LEVEL
    }
}

/// Hyperparameters chosen for one site group and outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group: SiteGroup,
    pub fold: usize,
    pub searched_sites: Vec<SiteId>,
    pub selection: Selection,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeRun {
    pub folds: Option<FoldSpec>,
    pub selections: Vec<GroupSelection>,
    /// Ordered by (site, attribute, fold).
    pub records: Vec<ProbeRecord>,
    pub models: Vec<ProbeSet>,
    pub completed_sites: Vec<SiteId>,
}

/// Fits the final probes of one site for one outer fold and scores them on
/// the held-out stimuli. Preprocessing and ridge weights see training rows
/// only.
pub fn run_outer_fold(
    site: &SiteData,
    targets: &Targets,
    train: &[usize],
    test: &[usize],
    fold: usize,
    alpha: f64,
    q: usize,
    config: &PipelineConfig,
) -> Result<(ProbeSet, Vec<ProbeRecord>)> {
    let ctx = |e: Error| e.context(format!("site {}, fold {fold}", site.site));
    let set = fit_probe_set(site, targets, train, fold, alpha, q, config.pca_method).map_err(ctx)?;
    let records = evaluate_probe_set(site, targets, &set, train, test, config).map_err(ctx)?;
    Ok((set, records))
}

/// Fits one probe per attribute on the `train` stimuli.
pub fn fit_probe_set(
    site: &SiteData,
    targets: &Targets,
    train: &[usize],
    fold: usize,
    alpha: f64,
    q: usize,
    method: PcaMethod,
) -> Result<ProbeSet> {
    let x = site.rows(train);
    let y = targets.rows(train, site.per_stimulus);
    let cap = feasible_q(x.nrows(), x.ncols());
    if q > cap {
        log::info!("site {}: component count {q} clipped to {cap}", site.site);
    }
    let (pre, z) = Preprocessor::fit(&x, q.min(cap), method)?;
    let system = RidgeSystem::new(&z, &y)?;
    let fits = system.solve(pre.q(), alpha)?;
    let weights = fits
        .into_iter()
        .zip(&targets.attribute_ids)
        .map(|(fit, &attribute_id)| AttributeWeights {
            attribute_id,
            alpha,
            intercept: fit.intercept,
            beta: fit.beta,
        })
        .collect();
    Ok(ProbeSet {
        site: site.site,
        fold,
        preprocessing: Arc::new(pre),
        weights,
    })
}

fn evaluate_probe_set(
    site: &SiteData,
    targets: &Targets,
    set: &ProbeSet,
    train: &[usize],
    test: &[usize],
    config: &PipelineConfig,
) -> Result<Vec<ProbeRecord>> {
    let z = set.preprocessing.transform(&site.rows(test))?;
    let groups = site.row_groups(test);
    let per = site.per_stimulus;
    let mut out = Vec::with_capacity(set.weights.len());
    for (col, w) in set.weights.iter().enumerate() {
        let model = set.model(w.attribute_id).expect("weights present");
        let y_hat = model.predict(&z)?;
        let stim_y = targets.stimulus_values(test, col);
        let row_y: Vec<f64> = groups.iter().map(|&g| stim_y[g]).collect();
        let err = rmse(&row_y, &y_hat)?;
        let mean_pred: Vec<f64> = y_hat.chunks(per).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let err_mean = rmse(&stim_y, &mean_pred)?;
        let plan = config.permutations.derive(&[
            "rmse",
            &set.site.to_string(),
            &w.attribute_id.to_string(),
            &set.fold.to_string(),
        ]);
        let p = perm_test_rmse_grouped(&stim_y, &groups, &y_hat, &plan)?;
        let train_y = targets.stimulus_values(train, col);
        let degenerate = train_y.iter().all(|v| *v == train_y[0]);
        out.push(ProbeRecord {
            site: set.site,
            attribute_id: w.attribute_id,
            alpha: w.alpha,
            q: set.preprocessing.q(),
            rmse_stimulus_mean: err_mean,
            degenerate,
            n_test_rows: y_hat.len(),
            result: ProbeResult {
                rmse: err,
                p_value: p,
                predictions: if config.keep_predictions { y_hat } else { Vec::new() },
                fold_id: set.fold,
            },
        });
    }
    Ok(out)
}

/// Grid search on the training folds of one outer fold, then final fits for
/// every site of the group. Only `train_folds` stimuli are ever read.
pub fn fit_fold_models(
    group_sites: &[&SiteData],
    targets: &Targets,
    train_folds: &[Vec<usize>],
    fold: usize,
    config: &PipelineConfig,
) -> Result<(GroupSelection, Vec<ProbeSet>)> {
    let group = group_of(group_sites)?;
    let selection = select_for_fold(group_sites, targets, train_folds, fold, config)?;
    let train = super::folds::union_sorted(train_folds);
    let sets = group_sites
        .par_iter()
        .map(|s| {
            fit_probe_set(s, targets, &train, fold, selection.selection.alpha, selection.selection.q, config.pca_method)
                .map_err(|e| e.context(format!("site {}, fold {fold}", s.site)))
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(sets.iter().all(|s| s.site.kind.group() == group));
    Ok((selection, sets))
}

fn group_of(sites: &[&SiteData]) -> Result<SiteGroup> {
    let first = sites
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty site group".into()))?
        .site
        .kind
        .group();
    if sites.iter().any(|s| s.site.kind.group() != first) {
        return Err(Error::InvalidArgument("sites from different groups searched together".into()));
    }
    Ok(first)
}

fn select_for_fold(
    group_sites: &[&SiteData],
    targets: &Targets,
    train_folds: &[Vec<usize>],
    fold: usize,
    config: &PipelineConfig,
) -> Result<GroupSelection> {
    let group = group_of(group_sites)?;
    let searched: Vec<&SiteData> = search_subset(group_sites.len(), config.stride_for(group))
        .into_iter()
        .map(|i| group_sites[i])
        .collect();
    let selection = grid_search(&searched, targets, train_folds, &config.grid(group), config.pca_method)
        .map_err(|e| e.context(format!("grid search for group {group}, fold {fold}")))?;
    log::info!(
        "group {group}, fold {fold}: alpha = {}, q = {} (validation RMSE {:.4})",
        selection.alpha,
        selection.q,
        selection.score
    );
    Ok(GroupSelection {
        group,
        fold,
        searched_sites: searched.iter().map(|s| s.site).collect(),
        selection,
    })
}

/// Runs the complete analysis for `sites`. On failure, everything finished
/// before the failing site is returned alongside the error.
pub fn run_probes_partial(
    store: &Store,
    targets: &Targets,
    sites: &[SiteId],
    config: &PipelineConfig,
) -> (ProbeRun, Option<Error>) {
    let mut run = ProbeRun::default();
    let err = run_into(store, targets, sites, config, &mut run).err();
    (run, err)
}

pub fn run_probes(store: &Store, targets: &Targets, sites: &[SiteId], config: &PipelineConfig) -> Result<ProbeRun> {
    match run_probes_partial(store, targets, sites, config) {
        (run, None) => Ok(run),
        (_, Some(e)) => Err(e),
    }
}

fn run_into(
    store: &Store,
    targets: &Targets,
    sites: &[SiteId],
    config: &PipelineConfig,
    run: &mut ProbeRun,
) -> Result<()> {
    let folds = make_folds(&store.manifest().stimuli, config.outer_folds, config.fold_seed)?;
    run.folds = Some(folds.clone());
    let mut by_group: BTreeMap<SiteGroup, Vec<SiteId>> = BTreeMap::new();
    for s in sites {
        if store.manifest().entry(s).is_none() {
            return Err(Error::UnknownSite(*s));
        }
        by_group.entry(s.kind.group()).or_default().push(*s);
    }
    for (group, mut members) in by_group {
        members.sort();
        members.dedup();
        // search sites are loaded once and kept for the group
        let positions = search_subset(members.len(), config.stride_for(group));
        let searched: Vec<SiteData> = positions
            .iter()
            .map(|&i| SiteData::load(store, members[i]))
            .collect::<Result<_>>()?;
        let searched_refs: Vec<&SiteData> = searched.iter().collect();
        let grid = config.grid(group);
        let selections = (0..folds.k())
            .into_par_iter()
            .map(|f| {
                let sel = grid_search(&searched_refs, targets, &folds.inner(f), &grid, config.pca_method)
                    .map_err(|e| e.context(format!("grid search for group {group}, fold {f}")))?;
                log::info!("group {group}, fold {f}: alpha = {}, q = {} (validation RMSE {:.4})", sel.alpha, sel.q, sel.score);
                Ok(GroupSelection {
                    group,
                    fold: f,
                    searched_sites: searched.iter().map(|s| s.site).collect(),
                    selection: sel,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        run.selections.extend(selections.iter().cloned());
        for site in &members {
            let data = match searched.iter().find(|s| s.site == *site) {
                Some(d) => d.clone(),
                None => SiteData::load(store, *site)?,
            };
            let results = (0..folds.k())
                .into_par_iter()
                .map(|f| {
                    let sel = &selections[f].selection;
                    run_outer_fold(&data, targets, &folds.train(f), folds.test(f), f, sel.alpha, sel.q, config)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut records = Vec::new();
            for (set, recs) in results {
                if config.keep_models {
                    run.models.push(set);
                }
                records.extend(recs);
            }
            records.sort_by_key(|r| (r.attribute_id, r.fold()));
            run.records.extend(records);
            run.completed_sites.push(*site);
            log::info!("site {site} done");
        }
    }
    run.records.sort_by_key(|r| (r.site, r.attribute_id, r.fold()));
    Ok(())
}

/// Convenience for callers holding sites in memory.
pub fn select_hyperparameters(
    group_sites: &[&SiteData],
    targets: &Targets,
    train_folds: &[Vec<usize>],
    fold: usize,
    config: &PipelineConfig,
) -> Result<GroupSelection> {
    select_for_fold(group_sites, targets, train_folds, fold, config)
}
