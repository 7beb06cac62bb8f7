//! PCA followed by per-channel z-scoring, both fitted on training rows only.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels whose standard deviation falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

/// Relative eigenvalue floor below which a direction is considered empty.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMethod {
    /// Gram trick when rows < columns, covariance otherwise.
    #[default]
    Auto,
    /// Eigen-decomposition of the d x d covariance.
    Covariance,
    /// Eigen-decomposition of the n x n Gram matrix.
    Gram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaState {
    pub mean: DVector<f64>,
    /// q x d, orthonormal rows in descending explained-variance order.
    pub components: DMatrix<f64>,
    /// Population variance captured by each component.
    pub explained_variance: Vec<f64>,
    /// Total population variance of the fitted data.
    pub total_variance: f64,
}

impl PcaState {
    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    /// Number of components with non-negligible variance.
    pub fn rank(&self) -> usize {
        let top = self.explained_variance.first().copied().unwrap_or(0.0);
        self.explained_variance
            .iter()
            .take_while(|&&v| v > top * RANK_TOL)
            .count()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// Keeps the leading `q` components.
    pub fn truncate(&self, q: usize) -> PcaState {
        let q = q.min(self.q());
        PcaState {
            mean: self.mean.clone(),
            components: self.components.rows(0, q).into_owned(),
            explained_variance: self.explained_variance[..q].to_vec(),
            total_variance: self.total_variance,
        }
    }

    /// Centers `rows` on the fitted mean and projects onto the components.
    pub fn transform(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.d() {
            return Err(Error::Dimension(format!(
                "PCA fitted on width {}, got {}",
                self.d(),
                rows.ncols()
            )));
        }
        let centered = center(rows, &self.mean);
        Ok(centered * self.components.transpose())
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Flips each row so its largest-magnitude coordinate is positive (first
/// such coordinate on ties).
fn fix_signs(components: &mut DMatrix<f64>) {
    for i in 0..components.nrows() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for j in 0..components.ncols() {
            let a = components[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = j;
            }
        }
        if components[(i, best)] < 0.0 {
            components.row_mut(i).neg_mut();
        }
    }
}

/// Indices of eigenvalues in descending order (stable on ties).
fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Fits PCA with `q` components.
pub fn pca_fit(rows: &DMatrix<f64>, q: usize) -> Result<PcaState> {
    pca_fit_with(rows, q, PcaMethod::Auto)
}

pub fn pca_fit_with(rows: &DMatrix<f64>, q: usize, method: PcaMethod) -> Result<PcaState> {
    let (n, d) = rows.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if q == 0 || q > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "component count {q} must be in 1..={}",
            n.min(d)
        )));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean = column_means(rows);
    let centered = center(rows, &mean);
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if total_variance <= 0.0 {
        return Err(Error::Degenerate("all PCA input columns are constant".into()));
    }
    let use_gram = match method {
        PcaMethod::Auto => n < d,
        PcaMethod::Covariance => false,
        PcaMethod::Gram => true,
    };
    let (mut components, explained_variance) = if use_gram {
        gram_components(&centered, q)
    } else {
        covariance_components(&centered, q)
    };
    fix_signs(&mut components);
    Ok(PcaState {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

fn covariance_components(centered: &DMatrix<f64>, q: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = centered.shape();
    let mut cov = centered.tr_mul(centered);
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let order = descending(&eig.eigenvalues);
    let mut components = DMatrix::zeros(q, d);
    let mut variance = Vec::with_capacity(q);
    for (r, &k) in order.iter().take(q).enumerate() {
        components.row_mut(r).copy_from(&eig.eigenvectors.column(k).transpose());
        variance.push(eig.eigenvalues[k].max(0.0));
    }
    (components, variance)
}

fn gram_components(centered: &DMatrix<f64>, q: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = centered.shape();
    let mut gram = centered * centered.transpose();
    gram /= n as f64;
    let eig = SymmetricEigen::new(gram);
    let order = descending(&eig.eigenvalues);
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut components = DMatrix::zeros(q, d);
    let mut variance = Vec::with_capacity(q);
    let mut filled = 0;
    for &k in order.iter().take(q) {
        let lambda = eig.eigenvalues[k];
        if lambda <= top * RANK_TOL {
            break;
        }
        // X^T v / sqrt(n * lambda) is a unit eigenvector of the covariance.
        let v = eig.eigenvectors.column(k);
        let w = centered.tr_mul(&v) / (n as f64 * lambda).sqrt();
        components.row_mut(filled).copy_from(&w.transpose());
        variance.push(lambda);
        filled += 1;
    }
    complete_basis(&mut components, filled);
    variance.resize(q, 0.0);
    (components, variance)
}

/// Fills rows `filled..` with unit vectors orthogonal to all previous rows,
/// drawn from the standard basis by Gram-Schmidt.
fn complete_basis(components: &mut DMatrix<f64>, mut filled: usize) {
    let (q, d) = components.shape();
    let mut e = 0;
    while filled < q && e < d {
        let mut v = DVector::<f64>::zeros(d);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for r in 0..filled {
                let row = components.row(r).transpose();
                let dot = row.dot(&v);
                v -= row * dot;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            components.row_mut(filled).copy_from(&(v / norm).transpose());
            filled += 1;
        }
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreState {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn is_constant(&self, channel: usize) -> bool {
        self.std[channel] < CONSTANT_STD
    }

    pub fn constant_channels(&self) -> Vec<usize> {
        (0..self.width()).filter(|&c| self.is_constant(c)).collect()
    }

    pub fn truncate(&self, q: usize) -> ZScoreState {
        let q = q.min(self.width());
        ZScoreState {
            mean: self.mean[..q].to_vec(),
            std: self.std[..q].to_vec(),
        }
    }

    /// Normalizes with the stored statistics; constant channels map to 0.
    pub fn apply(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.width() {
            return Err(Error::Dimension(format!(
                "z-score fitted on width {}, got {}",
                self.width(),
                rows.ncols()
            )));
        }
        let mut out = rows.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.is_constant(j) {
                col.fill(0.0);
            } else {
                let (m, s) = (self.mean[j], self.std[j]);
                col.apply(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }
}

pub fn zscore_fit(rows: &DMatrix<f64>) -> Result<ZScoreState> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("z-score needs at least one row".into()));
    }
    let mut mean = Vec::with_capacity(rows.ncols());
    let mut std = Vec::with_capacity(rows.ncols());
    for col in rows.column_iter() {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(ZScoreState { mean, std })
}

pub fn zscore_fit_transform(rows: &DMatrix<f64>) -> Result<(ZScoreState, DMatrix<f64>)> {
    let state = zscore_fit(rows)?;
    let out = state.apply(rows)?;
    Ok((state, out))
}

/// PCA then z-score, as one fitted unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub pca: PcaState,
    pub zscore: ZScoreState,
}

impl Preprocessor {
    pub fn fit(rows: &DMatrix<f64>, q: usize, method: PcaMethod) -> Result<(Preprocessor, DMatrix<f64>)> {
        let pca = pca_fit_with(rows, q, method)?;
        let projected = pca.transform(rows)?;
        let (zscore, normalized) = zscore_fit_transform(&projected)?;
        Ok((Preprocessor { pca, zscore }, normalized))
    }

    pub fn q(&self) -> usize {
        self.pca.q()
    }

    pub fn d(&self) -> usize {
        self.pca.d()
    }

    pub fn transform(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.zscore.apply(&self.pca.transform(rows)?)
    }

    /// Leading-`q` restriction; equal to refitting with `q` components since
    /// both steps act per component.
    pub fn truncate(&self, q: usize) -> Preprocessor {
        Preprocessor {
            pca: self.pca.truncate(q),
            zscore: self.zscore.truncate(q),
        }
    }
}
