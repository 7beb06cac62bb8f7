//! Per-site reductions of probe records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pipeline::ProbeRecord;
use crate::data::{SiteId, SubgroupDef};
use crate::error::{Error, Result};
use crate::stats::{paired_t_test, PairedTTest, SIGNIFICANCE_LEVEL};

/// Mean and standard error of a sample. One value gives SE 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of an empty selection".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n == 1 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Ok(MeanSe { mean, se, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site: SiteId,
    /// Subgroup the summary is restricted to, if any.
    pub subgroup: Option<String>,
    pub mean_rmse: f64,
    /// Standard error over all (attribute, fold) values.
    pub se_rmse: f64,
    /// Standard error over per-attribute means (folds averaged first).
    pub se_rmse_attributes: f64,
    pub pct_significant: f64,
    pub mean_rmse_stimulus: f64,
    pub n_results: usize,
    pub n_attributes: usize,
    pub n_degenerate: usize,
}

impl SiteSummary {
    pub fn single_result(&self) -> bool {
        self.n_results == 1
    }
}

/// Summarises every site present in `records`, optionally restricted to the
/// members of `subgroup`. Sites with no matching record are omitted; an
/// entirely empty selection is an error.
pub fn aggregate(records: &[ProbeRecord], subgroup: Option<&SubgroupDef>) -> Result<Vec<SiteSummary>> {
    let mut by_site: BTreeMap<SiteId, Vec<&ProbeRecord>> = BTreeMap::new();
    for r in records {
        if subgroup.is_none_or(|g| g.contains(r.attribute_id)) {
            by_site.entry(r.site).or_default().push(r);
        }
    }
    if by_site.is_empty() {
        return Err(Error::InvalidArgument(match subgroup {
            Some(g) => format!("no probe results for subgroup {}", g.name),
            None => "no probe results to aggregate".into(),
        }));
    }
    by_site
        .into_iter()
        .map(|(site, mut recs)| {
            recs.sort_by_key(|r| (r.attribute_id, r.fold()));
            summarise(site, subgroup.map(|g| g.name.clone()), &recs)
        })
        .collect()
}

fn summarise(site: SiteId, subgroup: Option<String>, recs: &[&ProbeRecord]) -> Result<SiteSummary> {
    let all: Vec<f64> = recs.iter().map(|r| r.result.rmse).collect();
    let overall = MeanSe::of(&all)?;
    let per_attr = attribute_means(recs, |r| r.result.rmse);
    let attr_stats = MeanSe::of(&per_attr.values().copied().collect::<Vec<_>>())?;
    let sig = recs.iter().filter(|r| r.significant()).count();
    let stim: Vec<f64> = recs.iter().map(|r| r.rmse_stimulus_mean).collect();
    Ok(SiteSummary {
        site,
        subgroup,
        mean_rmse: overall.mean,
        se_rmse: overall.se,
        se_rmse_attributes: attr_stats.se,
        pct_significant: 100.0 * sig as f64 / recs.len() as f64,
        mean_rmse_stimulus: MeanSe::of(&stim)?.mean,
        n_results: recs.len(),
        n_attributes: per_attr.len(),
        n_degenerate: recs.iter().filter(|r| r.degenerate).count(),
    })
}

fn attribute_means(recs: &[&ProbeRecord], f: impl Fn(&ProbeRecord) -> f64) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in recs {
        let e = sums.entry(r.attribute_id).or_default();
        e.0 += f(r);
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

/// Paired t-test of RMSE between two sites, paired on (attribute, fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteComparison {
    pub site_a: SiteId,
    pub site_b: SiteId,
    pub n_pairs: usize,
    pub t: f64,
    pub p: f64,
    pub mean_difference: f64,
    pub significant: bool,
}

pub fn compare_sites(records: &[ProbeRecord], a: SiteId, b: SiteId) -> Result<SiteComparison> {
    let key = |s: SiteId| -> BTreeMap<(usize, usize), f64> {
        records
            .iter()
            .filter(|r| r.site == s)
            .map(|r| ((r.attribute_id, r.fold()), r.result.rmse))
            .collect()
    };
    let (ka, kb) = (key(a), key(b));
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for (k, v) in &ka {
        if let Some(w) = kb.get(k) {
            xa.push(*v);
            xb.push(*w);
        }
    }
    let PairedTTest { t, p, mean_difference, .. } =
        paired_t_test(&xa, &xb).map_err(|e| e.context(format!("comparing {a} with {b}")))?;
    Ok(SiteComparison {
        site_a: a,
        site_b: b,
        n_pairs: xa.len(),
        t,
        p,
        mean_difference,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}
