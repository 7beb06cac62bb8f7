//! Hyperparameter grids and the shared grid search over a site group.
//!
//! For each outer fold, every (alpha, q) pair is scored by training on each
//! 3-of-4 subset of the inner folds and validating on the held-out one. The
//! score is the mean validation RMSE over inner splits, attributes and the
//! group's search sites; the minimizing pair is used for every probe of the
//! group in that fold. Ties go to the smaller q, then the smaller alpha.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{SiteData, Targets};
use super::folds::union_sorted;
use crate::data::SiteGroup;
use crate::error::{Error, Result};
use crate::preprocess::{PcaMethod, Preprocessor};
use crate::probe::{rmse, RidgeSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Ascending, strictly positive penalties.
    pub alphas: Vec<f64>,
    /// Ascending principal-component counts.
    pub components: Vec<usize>,
}

impl GridConfig {
    pub fn new(alphas: Vec<f64>, components: Vec<usize>) -> Result<Self> {
        let g = GridConfig { alphas, components };
        g.validate()?;
        Ok(g)
    }

    /// `alpha_steps` penalties and `q_steps` component counts evenly
    /// spanning the given inclusive ranges.
    pub fn evenly(alpha: (f64, f64), alpha_steps: usize, q: (usize, usize), q_steps: usize) -> Result<Self> {
        let span = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n <= 1 {
                return vec![lo];
            }
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        let alphas = span(alpha.0, alpha.1, alpha_steps);
        let mut comps: Vec<usize> = span(q.0 as f64, q.1 as f64, q_steps)
            .into_iter()
            .map(|v| v.round() as usize)
            .collect();
        comps.dedup();
        Self::new(alphas, comps)
    }

    /// Default search ranges per site group (8 penalties x 9 component counts).
    pub fn default_for(group: SiteGroup) -> Self {
        let g = match group {
            SiteGroup::Clip => Self::evenly((110.0, 180.0), 8, (80, 160), 9),
            SiteGroup::UnetOutput => Self::evenly((8_000.0, 14_000.0), 8, (1_550, 1_950), 9),
            SiteGroup::UnetBottleneck => Self::evenly((5_000.0, 7_000.0), 8, (600, 1_100), 9),
        };
        g.expect("default grids are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.components.is_empty() {
            return Err(Error::InvalidArgument("grid must have at least one alpha and one component count".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("grid alphas must be finite and > 0".into()));
        }
        if self.components.contains(&0) {
            return Err(Error::InvalidArgument("grid component counts must be >= 1".into()));
        }
        if !self.alphas.windows(2).all(|w| w[0] < w[1]) || !self.components.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("grid values must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// Outcome of one grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub alpha: f64,
    pub q: usize,
    /// Mean validation RMSE of the chosen pair.
    pub score: f64,
    /// `scores[qi][ai]` for `components[qi]`, `alphas[ai]`.
    pub scores: Vec<Vec<f64>>,
}

/// Positions of the sites searched within a group: every `stride`-th site
/// in index order (the 10th, 20th, ... for stride 10), or all of them when
/// the group is shorter than the stride.
pub fn search_subset(n_sites: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let picked: Vec<usize> = (0..n_sites).filter(|p| (p + 1) % stride == 0).collect();
    if picked.is_empty() {
        (0..n_sites).collect()
    } else {
        picked
    }
}

/// Grid search over `sites` using `inner_folds` (stimulus id lists).
pub fn grid_search(
    sites: &[&SiteData],
    targets: &Targets,
    inner_folds: &[Vec<usize>],
    grid: &GridConfig,
    method: PcaMethod,
) -> Result<Selection> {
    grid.validate()?;
    if targets.m() == 0 {
        return Err(Error::InvalidArgument("grid search over an empty attribute set".into()));
    }
    if inner_folds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid search needs at least 2 inner folds, got {}",
            inner_folds.len()
        )));
    }
    if sites.is_empty() {
        return Err(Error::InvalidArgument("grid search over an empty site group".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..sites.len())
        .flat_map(|s| (0..inner_folds.len()).map(move |h| (s, h)))
        .collect();
    let partials: Vec<Result<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(s, h)| inner_split_scores(sites[s], targets, inner_folds, h, grid, method))
        .collect();
    let nq = grid.components.len();
    let na = grid.alphas.len();
    let mut sums = vec![0.0; nq * na];
    for p in partials {
        for (acc, v) in sums.iter_mut().zip(p?) {
            *acc += v;
        }
    }
    let count = (tasks.len() * targets.m()) as f64;
    let scores: Vec<Vec<f64>> = (0..nq)
        .map(|qi| (0..na).map(|ai| sums[qi * na + ai] / count).collect())
        .collect();
    let mut best = (0, 0);
    for qi in 0..nq {
        for ai in 0..na {
            if scores[qi][ai] < scores[best.0][best.1] {
                best = (qi, ai);
            }
        }
    }
    Ok(Selection {
        alpha: grid.alphas[best.1],
        q: grid.components[best.0],
        score: scores[best.0][best.1],
        scores,
    })
}

/// Largest component count a fit on `rows x d` supports.
pub fn feasible_q(rows: usize, d: usize) -> usize {
    rows.min(d)
}

/// Sum over attributes of validation RMSE for every grid point, for one
/// site and one held-out inner fold. Layout `[qi * n_alpha + ai]`.
fn inner_split_scores(
    site: &SiteData,
    targets: &Targets,
    inner_folds: &[Vec<usize>],
    held_out: usize,
    grid: &GridConfig,
    method: PcaMethod,
) -> Result<Vec<f64>> {
    let train_folds: Vec<Vec<usize>> = inner_folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .map(|(_, f)| f.clone())
        .collect();
    let train = union_sorted(&train_folds);
    let valid = &inner_folds[held_out];
    let x_train = site.rows(&train);
    let x_valid = site.rows(valid);
    let per = site.per_stimulus;
    let y_train = targets.rows(&train, per);
    let y_valid = targets.rows(valid, per);
    let q_max_grid = *grid.components.last().unwrap();
    let q_cap = feasible_q(x_train.nrows(), x_train.ncols());
    if q_max_grid > q_cap {
        log::info!(
            "site {}: grid component count {} clipped to {} ({} training rows, d = {})",
            site.site,
            q_max_grid,
            q_cap,
            x_train.nrows(),
            x_train.ncols()
        );
    }
    let q_fit = q_max_grid.min(q_cap);
    let ctx = |e: crate::Error| e.context(format!("grid search on site {}, inner fold {held_out}", site.site));
    let (pre, z_train) = Preprocessor::fit(&x_train, q_fit, method).map_err(ctx)?;
    let z_valid = pre.transform(&x_valid).map_err(ctx)?;
    let system = RidgeSystem::new(&z_train, &y_train).map_err(ctx)?;
    let na = grid.alphas.len();
    let mut out = vec![0.0; grid.components.len() * na];
    let truth: Vec<Vec<f64>> = y_valid.column_iter().map(|c| c.iter().copied().collect()).collect();
    for (qi, &q) in grid.components.iter().enumerate() {
        let q = q.min(q_fit);
        let z = z_valid.columns(0, q).into_owned();
        for (ai, &alpha) in grid.alphas.iter().enumerate() {
            let fits = system.solve(q, alpha).map_err(ctx)?;
            let mut total = 0.0;
            for (fit, y) in fits.iter().zip(&truth) {
                total += rmse(y, &fit.predict(&z)?)?;
            }
            out[qi * na + ai] = total;
        }
    }
    Ok(out)
}
