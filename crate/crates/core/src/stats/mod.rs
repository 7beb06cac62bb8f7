//! Permutation tests, cosine similarity and the paired t-test.

mod permutation;
mod similarity;
mod ttest;

pub use permutation::{
    derive_seed, p_value, perm_test_rmse, perm_test_rmse_grouped, perm_test_similarity, PermutationPlan, Permutations,
    DEFAULT_PERMUTATIONS, RNG_DESCRIPTION,
};
pub use similarity::cosine_similarity;
pub(crate) use permutation::fisher_yates;
pub use ttest::{paired_t_test, PairedTTest};

/// Significance threshold for probe p-values.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
