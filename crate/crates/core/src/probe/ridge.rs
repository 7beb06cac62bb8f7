//! Closed-form ridge regression with an unpenalized intercept.
//!
//! The objective is `alpha * |beta|^2 + sum_i (y_i - x_i^T beta - c)^2`: a
//! sum-of-squares data term with no `1/n` factor, so `alpha` values are on
//! the scale of the number of training rows. Solved by centering `X` and
//! `y`, Cholesky-factoring `X~^T X~ + alpha I` and back-substituting; the
//! intercept is then `mean(y) - mean(x)^T beta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal jitter tried once when an unregularized system will not factor.
pub const ZERO_ALPHA_JITTER: f64 = 1e-10;

/// Pivots at or below this fraction of the largest diagonal entry count as
/// a failed factorization.
const PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// The `alpha = 0` system only factored after adding jitter.
    pub jittered: bool,
}

impl RidgeFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_linear(&self.beta, self.intercept, x)
    }
}

/// `y_hat_i = x_i^T beta + c`.
pub fn predict_linear(beta: &[f64], intercept: f64, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::Dimension(format!(
            "{} feature columns for {} weights",
            x.ncols(),
            beta.len()
        )));
    }
    Ok(x
        .row_iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + intercept)
        .collect())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "rmse of {} targets against {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty vectors".into()));
    }
    Ok((sum_sq_diff(y, y_hat) / y.len() as f64).sqrt())
}

pub(crate) fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// In-place lower Cholesky factor. Returns false if a pivot is not
/// sufficiently positive.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= a[(j, k)] * a[(j, k)];
        }
        if !(diag > PIVOT_TOL * scale) {
            return false;
        }
        let ljj = diag.sqrt();
        a[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / ljj;
        }
    }
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}

/// Solves `L L^T x = b` for each column of `b`.
fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[(i, k)] * col[k];
            }
            col[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[(k, i)] * col[k];
            }
            col[i] = s / l[(i, i)];
        }
    }
    x
}

/// Centered cross-products of a design matrix, reusable across penalties,
/// leading-column subsets and targets.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    x_mean: DVector<f64>,
    y_mean: Vec<f64>,
    /// `X~^T X~`
    gram: DMatrix<f64>,
    /// `X~^T Y~`, one column per target.
    cross: DMatrix<f64>,
}

impl RidgeSystem {
    /// `x` is n x q, `ys` is n x m (one target per column).
    pub fn new(x: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("ridge fit needs at least one row".into()));
        }
        if ys.nrows() != n {
            return Err(Error::Dimension(format!("{n} design rows, {} target rows", ys.nrows())));
        }
        if x.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge input".into()));
        }
        let x_mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n as f64));
        let y_mean: Vec<f64> = ys.column_iter().map(|c| c.sum() / n as f64).collect();
        let mut xc = x.clone();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-x_mean[j]);
        }
        let mut yc = ys.clone();
        for (j, mut col) in yc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-y_mean[j]);
        }
        Ok(RidgeSystem {
            x_mean,
            y_mean,
            gram: xc.tr_mul(&xc),
            cross: xc.tr_mul(&yc),
        })
    }

    pub fn width(&self) -> usize {
        self.gram.nrows()
    }

    pub fn targets(&self) -> usize {
        self.y_mean.len()
    }

    /// Fits every target using only the leading `q` columns.
    pub fn solve(&self, q: usize, alpha: f64) -> Result<Vec<RidgeFit>> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if q > self.width() {
            return Err(Error::Dimension(format!("{q} columns requested of {}", self.width())));
        }
        let rhs = self.cross.rows(0, q).into_owned();
        let mut jittered = false;
        let beta = if q == 0 {
            DMatrix::zeros(0, self.targets())
        } else {
            let mut a = self.gram.view((0, 0), (q, q)).into_owned();
            for i in 0..q {
                a[(i, i)] += alpha;
            }
            let base = a.clone();
            if !cholesky_in_place(&mut a) {
                if alpha > 0.0 {
                    return Err(Error::Singular(format!("ridge system with alpha = {alpha}")));
                }
                a = base;
                for i in 0..q {
                    a[(i, i)] += ZERO_ALPHA_JITTER;
                }
                if !cholesky_in_place(&mut a) {
                    return Err(Error::Singular(
                        "unregularized ridge system (collinear columns); use alpha > 0".into(),
                    ));
                }
                log::warn!("alpha = 0 system needed diagonal jitter {ZERO_ALPHA_JITTER:e} to factor");
                jittered = true;
            }
            cholesky_solve(&a, &rhs)
        };
        Ok((0..self.targets())
            .map(|t| {
                let b: Vec<f64> = beta.column(t).iter().copied().collect();
                let shift: f64 = b.iter().zip(self.x_mean.iter()).map(|(u, v)| u * v).sum();
                RidgeFit {
                    intercept: self.y_mean[t] - shift,
                    beta: b,
                    jittered,
                }
            })
            .collect())
    }
}

/// Fits one target.
pub fn ridge_fit(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<RidgeFit> {
    let ys = DMatrix::from_column_slice(y.len(), 1, y);
    let system = RidgeSystem::new(x, &ys)?;
    Ok(system.solve(x.ncols(), alpha)?.remove(0))
}

/// Value of the ridge objective at `(beta, c)`.
pub fn ridge_objective(x: &DMatrix<f64>, y: &[f64], alpha: f64, beta: &[f64], intercept: f64) -> f64 {
    let pred = predict_linear(beta, intercept, x).expect("width checked by caller");
    alpha * beta.iter().map(|b| b * b).sum::<f64>() + sum_sq_diff(y, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn random_problem(n: usize, q: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, q, |_, _| rng.gen_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        (x, y)
    }

    /// Plain gradient descent on the objective, step 1/L with L bounded by
    /// the Frobenius norm of the Hessian.
    fn gradient_descent(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
        let (n, q) = x.shape();
        let mut aug = DMatrix::from_element(n, q + 1, 1.0);
        aug.view_mut((0, 0), (n, q)).copy_from(x);
        let mut h = aug.tr_mul(&aug) * 2.0;
        for i in 0..q {
            h[(i, i)] += 2.0 * alpha;
        }
        let lipschitz = h.norm();
        let yv = DVector::from_column_slice(y);
        let mut w = DVector::<f64>::zeros(q + 1);
        for _ in 0..200_000 {
            let mut grad = aug.tr_mul(&(&aug * &w - &yv)) * 2.0;
            for i in 0..q {
                grad[i] += 2.0 * alpha * w[i];
            }
            if grad.norm() < 1e-13 {
                break;
            }
            w -= grad / lipschitz;
        }
        (w.rows(0, q).iter().copied().collect(), w[q])
    }

    #[test]
    fn exact_linear_fit() {
        let fit = ridge_fit(&col(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0], 0.0).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 0.0, epsilon = 1e-12);
        let pred = fit.predict(&col(&[1.0, 2.0, 3.0])).unwrap();
        for (p, y) in pred.iter().zip([2.0, 4.0, 6.0]) {
            assert_abs_diff_eq!(*p, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_penalty_hand_case() {
        let x = col(&[1.0, 2.0, 3.0]);
        let y = [2.0, 4.0, 6.0];
        let fit = ridge_fit(&x, &y, 1.0).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 4.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.intercept, 4.0 / 3.0, epsilon = 1e-10);
        // numerical minimization lands on the same point
        let (b, c) = gradient_descent(&x, &y, 1.0);
        assert_abs_diff_eq!(b[0], 4.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c, 4.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn huge_penalty_predicts_mean() {
        let (x, y) = random_problem(20, 4, 3);
        let fit = ridge_fit(&x, &y, 1e9).unwrap();
        assert!(fit.beta.iter().all(|b| b.abs() < 1e-6));
        let mean = y.iter().sum::<f64>() / 20.0;
        for p in fit.predict(&x).unwrap() {
            assert_abs_diff_eq!(p, mean, epsilon = 1e-5);
        }
    }

    #[test]
    fn residuals_match_gradient_descent() {
        for seed in 0..5 {
            let (x, y) = random_problem(15, 3, seed);
            let fit = ridge_fit(&x, &y, 2.5).unwrap();
            let (b, c) = gradient_descent(&x, &y, 2.5);
            let p1 = fit.predict(&x).unwrap();
            let p2 = predict_linear(&b, c, &x).unwrap();
            for (u, v) in p1.iter().zip(&p2) {
                assert_abs_diff_eq!(u - v, 0.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn constant_model_predictions() {
        let x = DMatrix::from_element(4, 2, 0.7);
        assert_eq!(predict_linear(&[0.0, 0.0], 3.0, &x).unwrap(), vec![3.0; 4]);
        assert!(predict_linear(&[0.0], 3.0, &x).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn constant_target_gives_zero_weights() {
        let (x, _) = random_problem(10, 3, 8);
        let fit = ridge_fit(&x, &[4.0; 10], 1.0).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert_eq!(fit.intercept, 4.0);
    }

    #[test]
    fn collinear_unregularized_is_reported() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        match ridge_fit(&x, &[1.0, 2.0, 2.5, 4.0], 0.0) {
            Ok(fit) => assert!(fit.jittered),
            Err(e) => assert!(matches!(e, Error::Singular(_))),
        }
        assert!(!ridge_fit(&x, &[1.0, 2.0, 2.5, 4.0], 0.5).unwrap().jittered);
    }

    #[test]
    fn bad_inputs() {
        let x = col(&[1.0, f64::NAN]);
        assert!(matches!(ridge_fit(&x, &[1.0, 2.0], 1.0), Err(Error::NonFinite(_))));
        assert!(ridge_fit(&col(&[1.0, 2.0]), &[1.0, 2.0], -1.0).is_err());
        assert!(ridge_fit(&col(&[1.0, 2.0]), &[1.0], 1.0).is_err());
    }

    #[test]
    fn multi_target_matches_single() {
        let (x, y1) = random_problem(12, 4, 1);
        let (_, y2) = random_problem(12, 4, 2);
        let ys = DMatrix::from_fn(12, 2, |i, j| if j == 0 { y1[i] } else { y2[i] });
        let sys = RidgeSystem::new(&x, &ys).unwrap();
        let both = sys.solve(4, 3.0).unwrap();
        assert_eq!(both[0], ridge_fit(&x, &y1, 3.0).unwrap());
        // leading-column solve equals a fit on the truncated design
        let lead = sys.solve(2, 3.0).unwrap();
        let direct = ridge_fit(&x.columns(0, 2).into_owned(), &y2, 3.0).unwrap();
        for (a, b) in lead[1].beta.iter().zip(&direct.beta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn perturbation_never_improves_objective(seed in 0u64..10_000, alpha in 0.01f64..100.0) {
            let (x, y) = random_problem(12, 3, seed);
            let fit = ridge_fit(&x, &y, alpha).unwrap();
            let best = ridge_objective(&x, &y, alpha, &fit.beta, fit.intercept);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            for _ in 0..8 {
                let b: Vec<f64> = fit.beta.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
                let c = fit.intercept + rng.gen_range(-1e-3..1e-3);
                let val = ridge_objective(&x, &y, alpha, &b, c);
                prop_assert!(val >= best * (1.0 - 1e-8));
            }
        }

        #[test]
        fn weight_norm_shrinks_with_alpha(seed in 0u64..10_000, a in 0.0f64..50.0, da in 0.0f64..50.0) {
            let (x, y) = random_problem(15, 4, seed);
            let n1: f64 = ridge_fit(&x, &y, a).unwrap().beta.iter().map(|b| b * b).sum();
            let n2: f64 = ridge_fit(&x, &y, a + da).unwrap().beta.iter().map(|b| b * b).sum();
            prop_assert!(n2 <= n1 * (1.0 + 1e-10) + 1e-14);
        }

        #[test]
        fn scaling_targets_scales_fit(seed in 0u64..10_000, s in 0.1f64..10.0, alpha in 0.0f64..20.0) {
            let (x, y) = random_problem(15, 3, seed);
            let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
            let f1 = ridge_fit(&x, &y, alpha).unwrap();
            let f2 = ridge_fit(&x, &ys, alpha).unwrap();
            for (a, b) in f1.beta.iter().zip(&f2.beta) {
                prop_assert!((a * s - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            prop_assert!((f1.intercept * s - f2.intercept).abs() <= 1e-9 * (1.0 + f2.intercept.abs()));
            let r1 = rmse(&y, &f1.predict(&x).unwrap()).unwrap();
            let r2 = rmse(&ys, &f2.predict(&x).unwrap()).unwrap();
            prop_assert!((r1 * s - r2).abs() <= 1e-9 * (1.0 + r2));
        }
    }
}
