//! Permutation tests with reproducible, per-test permutation streams.
//!
//! Every test draws its own permutations from a ChaCha8 stream seeded by
//! `derive_seed(base_seed, key)`, so an entire analysis is reproducible from
//! one base seed while distinct tests see independent permutation sets.
//! Permutations are produced by Fisher-Yates with Lemire's unbiased bounded
//! integer sampling, both implemented here so results do not depend on the
//! shuffling internals of any particular `rand` release.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::similarity::{cosine_similarity, dot, norm};
use crate::error::{Error, Result};
use crate::probe::sum_sq_diff;

/// Permutation count used throughout the analysis.
pub const DEFAULT_PERMUTATIONS: usize = 2500;

/// Name of the permutation generator, recorded in run metadata.
pub const RNG_DESCRIPTION: &str = "ChaCha8 (rand_chacha), Fisher-Yates with Lemire bounded sampling, per-test seed = SHA-256(base seed LE || key parts)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub count: usize,
    pub seed: u64,
}

impl Default for PermutationPlan {
    fn default() -> Self {
        PermutationPlan {
            count: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

impl PermutationPlan {
    pub fn new(count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("permutation count must be >= 1".into()));
        }
        Ok(PermutationPlan { count, seed })
    }

    /// Plan for one specific test, e.g. `derive(&["rmse", "clip_hidden:3", "attr:7", "fold:2"])`.
    pub fn derive(&self, key: &[&str]) -> PermutationPlan {
        PermutationPlan {
            count: self.count,
            seed: derive_seed(self.seed, key),
        }
    }

    /// Smallest attainable p-value.
    pub fn min_p(&self) -> f64 {
        1.0 / (self.count as f64 + 1.0)
    }

    pub fn permutations(&self, n: usize) -> Permutations {
        Permutations {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            current: (0..n).collect(),
            remaining: self.count,
        }
    }
}

/// Stable seed derivation: first eight bytes of SHA-256 over the base seed
/// and the length-prefixed key parts.
pub fn derive_seed(base: u64, key: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for part in key {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Uniform integer in `0..range` (Lemire's multiply-shift with rejection).
fn bounded(rng: &mut ChaCha8Rng, range: u64) -> u64 {
    debug_assert!(range > 0);
    let mut m = u128::from(rng.next_u64()) * u128::from(range);
    let mut low = m as u64;
    if low < range {
        let threshold = range.wrapping_neg() % range;
        while low < threshold {
            m = u128::from(rng.next_u64()) * u128::from(range);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

pub(crate) fn fisher_yates(values: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = bounded(rng, i as u64 + 1) as usize;
        values.swap(i, j);
    }
}

/// Streaming iterator over a plan's permutations. Each item is a uniformly
/// random permutation of `0..n`, independent of the previous ones.
pub struct Permutations {
    rng: ChaCha8Rng,
    current: Vec<usize>,
    remaining: usize,
}

impl Permutations {
    /// Advances to the next permutation; `None` once the plan is exhausted.
    pub fn next_perm(&mut self) -> Option<&[usize]> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        fisher_yates(&mut self.current, &mut self.rng);
        Some(&self.current)
    }
}

/// `(better + 1) / (count + 1)`.
pub fn p_value(better: usize, count: usize) -> f64 {
    (better as f64 + 1.0) / (count as f64 + 1.0)
}

/// RMSE permutation test: the fraction (with the +1 correction) of
/// permutations `pi` for which `RMSE(pi(Y), Y_hat) < RMSE(Y, Y_hat)`.
pub fn perm_test_rmse(y: &[f64], y_hat: &[f64], plan: &PermutationPlan) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "{} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let groups: Vec<usize> = (0..y.len()).collect();
    perm_test_rmse_grouped(y, &groups, y_hat, plan)
}

/// RMSE permutation test where several rows share one target value (all
/// noise samples of a stimulus). `group_targets[g]` is the target of group
/// `g`, `row_groups[r]` the group of row `r`. Permutations act on groups, so
/// the within-stimulus structure is preserved under the null.
pub fn perm_test_rmse_grouped(
    group_targets: &[f64],
    row_groups: &[usize],
    y_hat: &[f64],
    plan: &PermutationPlan,
) -> Result<f64> {
    let g = group_targets.len();
    if row_groups.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "{} row groups vs {} predictions",
            row_groups.len(),
            y_hat.len()
        )));
    }
    if g < 2 {
        return Err(Error::Degenerate(format!("permutation test needs n >= 2, got {g}")));
    }
    if let Some(bad) = row_groups.iter().find(|&&r| r >= g) {
        return Err(Error::Dimension(format!("row group {bad} out of range ({g} groups)")));
    }
    if plan.count == 0 {
        return Err(Error::InvalidArgument("permutation count must be >= 1".into()));
    }
    let observed_y: Vec<f64> = row_groups.iter().map(|&r| group_targets[r]).collect();
    let observed = sum_sq_diff(&observed_y, y_hat);
    let mut perms = plan.permutations(g);
    let mut better = 0;
    while let Some(pi) = perms.next_perm() {
        let sse: f64 = row_groups
            .iter()
            .zip(y_hat)
            .map(|(&r, &p)| {
                let e = group_targets[pi[r]] - p;
                e * e
            })
            .sum();
        // same n on both sides, so comparing sums compares RMSEs
        if sse < observed {
            better += 1;
        }
    }
    Ok(p_value(better, plan.count))
}

/// Similarity permutation test: the fraction (with the +1 correction) of
/// permutations for which `cos(pi(u), v) < cos(u, v)`. High p means the pair
/// is more similar than chance, low p more dissimilar.
pub fn perm_test_similarity(u: &[f64], v: &[f64], plan: &PermutationPlan) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::Degenerate(format!("similarity test needs length >= 2, got {}", u.len())));
    }
    if plan.count == 0 {
        return Err(Error::InvalidArgument("permutation count must be >= 1".into()));
    }
    let observed = cosine_similarity(u, v)?;
    // permuting u leaves both norms unchanged
    let denom = norm(u) * norm(v);
    let mut perms = plan.permutations(u.len());
    let mut permuted = vec![0.0; u.len()];
    let mut better = 0;
    while let Some(pi) = perms.next_perm() {
        for (dst, &src) in permuted.iter_mut().zip(pi) {
            *dst = u[src];
        }
        let sim = (dot(&permuted, v) / denom).clamp(-1.0, 1.0);
        if sim < observed {
            better += 1;
        }
    }
    Ok(p_value(better, plan.count))
}
