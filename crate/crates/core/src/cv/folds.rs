use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Stimulus;
use crate::error::{Error, Result};
use crate::stats::{derive_seed, fisher_yates};

/// Outer folds as sorted lists of stimulus ids. Every row of a stimulus
/// (all of its noise seeds) belongs to the stimulus' fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSpec {
    pub fn new(mut folds: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &mut folds {
            f.sort_unstable();
            for &s in f.iter() {
                if !seen.insert(s) {
                    return Err(Error::InvalidArgument(format!("stimulus {s} in two folds")));
                }
            }
        }
        Ok(FoldSpec { folds })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// The other folds, which serve as inner folds for hyperparameter search.
    pub fn inner(&self, fold: usize) -> Vec<Vec<usize>> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .map(|(_, f)| f.clone())
            .collect()
    }

    /// Union of every fold except `fold`, sorted.
    pub fn train(&self, fold: usize) -> Vec<usize> {
        union_sorted(&self.inner(fold))
    }

    /// Which fold each stimulus id belongs to.
    pub fn assignment(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (f, ids) in self.folds.iter().enumerate() {
            for &s in ids {
                if s < n {
                    out[s] = Some(f);
                }
            }
        }
        out
    }
}

pub(crate) fn union_sorted(folds: &[Vec<usize>]) -> Vec<usize> {
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    all
}

/// Splits stimuli into `k` folds whose sizes differ by at most one.
///
/// Stimuli are first put into text order and then shuffled with `seed`, so
/// membership depends only on the set of stimulus texts and the seed, not on
/// the order in which stimuli are listed.
pub fn make_folds(stimuli: &[Stimulus], k: usize, seed: u64) -> Result<FoldSpec> {
    let n = stimuli.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 outer folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} folds for only {n} stimuli")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| stimuli[a].text.cmp(&stimuli[b].text));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["folds"]));
    fisher_yates(&mut order, &mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut ids: Vec<usize> = order[start..start + size].iter().map(|&i| stimuli[i].id).collect();
        ids.sort_unstable();
        folds.push(ids);
        start += size;
    }
    Ok(FoldSpec { folds })
}
