//! Ridge probes: fitting, prediction, scoring and persistence.

mod model;
mod ridge;

use serde::{Deserialize, Serialize};

pub use model::{AttributeWeights, ProbeModel, ProbeSet, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use ridge::{predict_linear, ridge_fit, ridge_objective, rmse, RidgeFit, RidgeSystem, ZERO_ALPHA_JITTER};
pub(crate) use ridge::sum_sq_diff;

/// Held-out evaluation of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub rmse: f64,
    /// Permutation p-value, `(b + 1) / (|perms| + 1)`.
    pub p_value: f64,
    pub predictions: Vec<f64>,
    pub fold_id: usize,
}
