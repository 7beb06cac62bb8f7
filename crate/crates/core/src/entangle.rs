//! Attribute entanglement: pairwise cosine similarity of attribute vectors
//! after channel-wise z-scoring, with permutation-based states, and the
//! comparison of states between the probe and human domains.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeSet;
use crate::stats::{cosine_similarity, perm_test_similarity, PermutationPlan};

/// p above this is positive entanglement.
pub const POSITIVE_THRESHOLD: f64 = 0.95;
/// p below this is negative entanglement.
pub const NEGATIVE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Model,
    Human,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Model => "model",
            Domain::Human => "human",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Positive,
    Negative,
    Disentangled,
}

impl State {
    /// Strict thresholds: p of exactly 0.95 or 0.05 is disentangled.
    pub fn from_p(p: f64) -> State {
        if p > POSITIVE_THRESHOLD {
            State::Positive
        } else if p < NEGATIVE_THRESHOLD {
            State::Negative
        } else {
            State::Disentangled
        }
    }

    pub fn is_entangled(self) -> bool {
        self != State::Disentangled
    }

    pub fn as_str(self) -> &'static str {
        match self {
            State::Positive => "positive",
            State::Negative => "negative",
            State::Disentangled => "disentangled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementRecord {
    /// Attribute ids, `a < b`.
    pub a: usize,
    pub b: usize,
    pub domain: Domain,
    pub similarity: f64,
    pub p_value: f64,
    pub state: State,
}

/// Records of one domain (and, for the model domain, one site and fold).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSet {
    /// Ordered by `(a, b)`.
    pub records: Vec<EntanglementRecord>,
    /// Pairs involving a vector that is zero after normalization.
    pub skipped: Vec<(usize, usize)>,
}

impl EntanglementSet {
    /// Record for a pair in either order; self-pairs have none.
    pub fn get(&self, a: usize, b: usize) -> Option<&EntanglementRecord> {
        let key = (a.min(b), a.max(b));
        self.records
            .binary_search_by_key(&key, |r| (r.a, r.b))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn state_percentages(&self) -> StateBreakdown {
        let n = self.records.len();
        let pct = |s: State| {
            if n == 0 {
                0.0
            } else {
                100.0 * self.records.iter().filter(|r| r.state == s).count() as f64 / n as f64
            }
        };
        StateBreakdown {
            positive: pct(State::Positive),
            negative: pct(State::Negative),
            disentangled: pct(State::Disentangled),
            n_pairs: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBreakdown {
    pub positive: f64,
    pub negative: f64,
    pub disentangled: f64,
    pub n_pairs: usize,
}

/// Z-scores every channel (coordinate) across the attribute vectors, with
/// population standard deviation. Channels constant across attributes
/// become zero.
pub fn zscore_channels(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = vectors.len();
    let len = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::Dimension("attribute vectors of unequal length".into()));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribute vectors".into()));
    }
    let mut out = vec![vec![0.0; len]; m];
    for c in 0..len {
        let mean = vectors.iter().map(|v| v[c]).sum::<f64>() / m as f64;
        let var = vectors.iter().map(|v| (v[c] - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        if sd < 1e-12 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(vectors) {
            o[c] = (v[c] - mean) / sd;
        }
    }
    Ok(out)
}

/// Tests every unordered pair of `vectors` (attribute ids `ids`).
/// `context` distinguishes the permutation streams of different calls, e.g.
/// the site and fold of a model-domain run.
pub fn entangle_domain(
    ids: &[usize],
    vectors: &[Vec<f64>],
    domain: Domain,
    plan: &PermutationPlan,
    context: &str,
) -> Result<EntanglementSet> {
    if ids.len() != vectors.len() {
        return Err(Error::Dimension(format!("{} ids for {} vectors", ids.len(), vectors.len())));
    }
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "entanglement needs at least 2 attributes, got {}",
            vectors.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::InvalidArgument("duplicate attribute id".into()));
    }
    let z = zscore_channels(vectors)?;
    let zero: Vec<bool> = z.iter().map(|v| v.iter().all(|x| *x == 0.0)).collect();
    let pairs: Vec<(usize, usize)> = order
        .iter()
        .enumerate()
        .flat_map(|(k, &i)| order[k + 1..].iter().map(move |&j| (i, j)))
        .collect();
    let domain_key = domain.to_string();
    let results = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Option<EntanglementRecord>> {
            if zero[i] || zero[j] {
                return Ok(None);
            }
            let (a, b) = (ids[i], ids[j]);
            let similarity = cosine_similarity(&z[i], &z[j])?;
            let pair_plan = plan.derive(&["entangle", &domain_key, context, &a.to_string(), &b.to_string()]);
            let p_value = perm_test_similarity(&z[i], &z[j], &pair_plan)?;
            Ok(Some(EntanglementRecord {
                a,
                b,
                domain,
                similarity,
                p_value,
                state: State::from_p(p_value),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = EntanglementSet::default();
    for (r, &(i, j)) in results.into_iter().zip(&pairs) {
        match r {
            Some(r) => set.records.push(r),
            None => {
                log::warn!("entanglement pair ({}, {}) skipped: zero vector after normalization", ids[i], ids[j]);
                set.skipped.push((ids[i], ids[j]));
            }
        }
    }
    Ok(set)
}

/// Human domain: each attribute's rating vector over all stimuli.
pub fn entangle_ratings(ids: &[usize], columns: &[Vec<f64>], plan: &PermutationPlan) -> Result<EntanglementSet> {
    entangle_domain(ids, columns, Domain::Human, plan, "ratings")
}

/// Model domain: the probe weight vectors of one site and fold, all in that
/// fold's preprocessing basis.
pub fn entangle_probes(set: &ProbeSet, plan: &PermutationPlan) -> Result<EntanglementSet> {
    let ids: Vec<usize> = set.weights.iter().map(|w| w.attribute_id).collect();
    let vectors: Vec<Vec<f64>> = set.weights.iter().map(|w| w.beta.clone()).collect();
    entangle_domain(&ids, &vectors, Domain::Model, plan, &format!("{}/fold{}", set.site, set.fold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainSummary {
    /// Human-disentangled but probe-entangled.
    pub pct_humans_disentangle_more: f64,
    /// Human-entangled but probe-disentangled.
    pub pct_probes_disentangle_more: f64,
    /// Remainder, including pairs entangled with opposite signs.
    pub pct_agreement: f64,
    /// Entangled in both domains with opposite signs.
    pub pct_sign_mismatch: f64,
    pub n_pairs: usize,
}

/// Compares the states of the same pairs in the two domains.
pub fn cross_domain(model: &EntanglementSet, human: &EntanglementSet) -> Result<CrossDomainSummary> {
    let key = |s: &EntanglementSet| -> BTreeMap<(usize, usize), State> {
        s.records.iter().map(|r| ((r.a, r.b), r.state)).collect()
    };
    let (m, h) = (key(model), key(human));
    if m.len() != h.len() || m.keys().ne(h.keys()) {
        let only_m = m.keys().filter(|k| !h.contains_key(k)).count();
        let only_h = h.keys().filter(|k| !m.contains_key(k)).count();
        return Err(Error::InvalidArgument(format!(
            "pair sets differ: {only_m} pairs only in the model domain, {only_h} only in the human domain"
        )));
    }
    let n = m.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no pairs to compare".into()));
    }
    let (mut humans_more, mut probes_more, mut mismatch) = (0usize, 0usize, 0usize);
    for (k, ms) in &m {
        let hs = h[k];
        match (hs.is_entangled(), ms.is_entangled()) {
            (false, true) => humans_more += 1,
            (true, false) => probes_more += 1,
            (true, true) if hs != *ms => mismatch += 1,
            _ => {}
        }
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(CrossDomainSummary {
        pct_humans_disentangle_more: pct(humans_more),
        pct_probes_disentangle_more: pct(probes_more),
        pct_agreement: pct(n - humans_more - probes_more),
        pct_sign_mismatch: pct(mismatch),
        n_pairs: n,
    })
}

/// Mean of per-fold summaries.
pub fn average_summaries(summaries: &[CrossDomainSummary]) -> Result<CrossDomainSummary> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("no summaries to average".into()));
    }
    let k = summaries.len() as f64;
    let mean = |f: fn(&CrossDomainSummary) -> f64| summaries.iter().map(f).sum::<f64>() / k;
    Ok(CrossDomainSummary {
        pct_humans_disentangle_more: mean(|s| s.pct_humans_disentangle_more),
        pct_probes_disentangle_more: mean(|s| s.pct_probes_disentangle_more),
        pct_agreement: mean(|s| s.pct_agreement),
        pct_sign_mismatch: mean(|s| s.pct_sign_mismatch),
        n_pairs: summaries[0].n_pairs,
    })
}

/// Restricts a set to the pairs present in `other` (used when one domain
/// skipped zero-vector pairs).
pub fn common_pairs(set: &EntanglementSet, other: &EntanglementSet) -> EntanglementSet {
    EntanglementSet {
        records: set
            .records
            .iter()
            .filter(|r| other.get(r.a, r.b).is_some())
            .cloned()
            .collect(),
        skipped: set.skipped.clone(),
    }
}
