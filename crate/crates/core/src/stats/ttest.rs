use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    /// Two-sided p-value from Student's t with `dof` degrees of freedom.
    pub p: f64,
    pub dof: usize,
    pub mean_difference: f64,
}

/// Paired-samples t-test on `a - b`.
///
/// Identical samples give `t = 0, p = 1`. Differences that are constant but
/// nonzero leave `t` undefined and are reported as [`Error::Degenerate`].
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs k >= 2, got {k}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let mean = diffs.iter().sum::<f64>() / k as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (k - 1) as f64;
    let dof = k - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(PairedTTest { t: 0.0, p: 1.0, dof, mean_difference: 0.0 });
        }
        return Err(Error::Degenerate(format!(
            "paired differences have zero variance (all equal to {mean})"
        )));
    }
    let t = mean / (var / k as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTTest { t, p, dof, mean_difference: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn reference_value() {
        // differences (1, 2, 3): mean 2, sd 1, t = 2 sqrt(3); p from t(2)
        let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.t, 2.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(r.dof, 2);
        // closed form for 2 dof: p = 1 - |t| / sqrt(2 + t^2)
        let closed = 1.0 - r.t / (2.0 + r.t * r.t).sqrt();
        assert_abs_diff_eq!(r.p, closed, epsilon = 1e-10);
        assert_abs_diff_eq!(r.p, 0.0742, epsilon = 1e-4);
    }

    #[test]
    fn swapping_negates_t() {
        let a = [3.1, 2.2, 5.0, 4.4];
        let b = [2.0, 2.5, 3.9, 4.0];
        let x = paired_t_test(&a, &b).unwrap();
        let y = paired_t_test(&b, &a).unwrap();
        assert_eq!(x.t, -y.t);
        assert_eq!(x.p, y.p);
    }

    #[test]
    fn constant_nonzero_differences_are_reported() {
        assert!(matches!(paired_t_test(&[2.0, 3.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }
}
