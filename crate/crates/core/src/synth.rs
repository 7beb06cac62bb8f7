//! Synthetic feature stores and ratings with planted ground truth.
//!
//! Each stimulus `i` has a latent `z_i ~ N(0, I_r)`. A site row is
//! `x = a M z_i + sigma_f e` with a per-site mixing matrix `M` (entries
//! `N(0, 1/r)`), `a = sqrt(1 - sigma_f^2)` and fresh noise `e` per row, so
//! features are close to standard Gaussian. Attribute `j` has a unit latent
//! direction `u_j`; its continuous target is `t_ij = u_j . z_i + sigma_r n_ij`
//! and the rating cuts `t_j` at its empirical quintiles. Null attributes
//! have `u_j = 0` and a unit-variance noise target.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{
    all_bundled_questions, RatingTable, SiteFilter, SiteId, SiteKind, SiteMatrix, Stimulus, StoreManifest, StoreWriter,
    CLIP_HIDDEN_LAYERS,
};
use crate::entangle::State;
use crate::error::{Error, Result};

/// Attribute pair whose latent directions have correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_stimuli: usize,
    pub seeds_per_stimulus: usize,
    /// Site filters with explicit ranges, e.g. `unet_output:1..5`.
    pub sites: Vec<String>,
    pub d: usize,
    pub m_attributes: usize,
    /// The last `null_attributes` attributes carry no signal.
    pub null_attributes: usize,
    /// Latent dimension; defaults to the number of planted attributes.
    pub latent_dim: Option<usize>,
    pub sigma_feature: f64,
    pub sigma_rating: f64,
    pub pairs: Vec<PlantedPair>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_stimuli: 100,
            seeds_per_stimulus: 3,
            sites: vec![
                "clip_hidden:1..3".into(),
                "clip_final".into(),
                "unet_bottleneck:1..2".into(),
                "unet_output:1..2".into(),
            ],
            d: 32,
            m_attributes: 12,
            null_attributes: 2,
            latent_dim: None,
            sigma_feature: 0.3,
            sigma_rating: 0.1,
            pairs: vec![PlantedPair { a: 0, b: 1, rho: 1.0 }, PlantedPair { a: 2, b: 3, rho: -1.0 }],
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn n_planted(&self) -> usize {
        self.m_attributes.saturating_sub(self.null_attributes)
    }

    pub fn latent(&self) -> usize {
        self.latent_dim.unwrap_or(self.n_planted()).max(1)
    }

    pub fn site_ids(&self) -> Result<Vec<SiteId>> {
        let mut out = Vec::new();
        for s in &self.sites {
            let f: SiteFilter = s.parse()?;
            let (first, last) = match f.kind {
                SiteKind::ClipFinal => (0, 0),
                SiteKind::ClipHidden => (f.first.unwrap_or(1), f.last.unwrap_or(CLIP_HIDDEN_LAYERS)),
                _ => match (f.first, f.last) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::SiteSpec(format!("{s}: U-Net sites need an explicit index range"))),
                },
            };
            for index in first..=last {
                out.push(SiteId::new(f.kind, index)?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_stimuli < 2 {
            return bad("n_stimuli must be >= 2".into());
        }
        if self.seeds_per_stimulus == 0 || self.d == 0 || self.m_attributes == 0 {
            return bad("seeds_per_stimulus, d and m_attributes must be >= 1".into());
        }
        if self.null_attributes > self.m_attributes {
            return bad("null_attributes exceeds m_attributes".into());
        }
        if !(0.0..=1.0).contains(&self.sigma_feature) {
            return bad(format!("sigma_feature must lie in [0, 1], got {}", self.sigma_feature));
        }
        if !(self.sigma_rating >= 0.0) || !self.sigma_rating.is_finite() {
            return bad(format!("sigma_rating must be >= 0, got {}", self.sigma_rating));
        }
        for p in &self.pairs {
            if !(-1.0..=1.0).contains(&p.rho) {
                return bad(format!("pair ({}, {}): correlation {} outside [-1, 1]", p.a, p.b, p.rho));
            }
            if p.a == p.b || p.a.max(p.b) >= self.n_planted() {
                return bad(format!("pair ({}, {}) must name two distinct planted attributes", p.a, p.b));
            }
        }
        if self.site_ids()?.is_empty() {
            return bad("no sites".into());
        }
        Ok(())
    }
}

/// Ground truth for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub site: SiteId,
    /// Feature-space weights `W_j` (attributes x d): `W_j . x` recovers
    /// `u_j . z` from a noise-free row.
    pub weights: Vec<Vec<f64>>,
    /// Per attribute: RMSE of the best linear predictor of the rating from
    /// one feature row, under the generating Gaussian model.
    pub rmse_floor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTruth {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub planted: Vec<usize>,
    pub null: Vec<usize>,
    /// Unit latent directions (attributes x r); zero rows for nulls.
    pub latent_weights: Vec<Vec<f64>>,
    /// Four ascending cut-points per attribute.
    pub cut_points: Vec<[f64; 4]>,
    pub pairs: Vec<PairTruth>,
    pub sites: Vec<SiteTruth>,
}

impl GroundTruth {
    pub fn site(&self, site: SiteId) -> Option<&SiteTruth> {
        self.sites.iter().find(|s| s.site == site)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }
}

pub struct SynthData {
    pub manifest: StoreManifest,
    pub matrices: Vec<(SiteId, SiteMatrix)>,
    pub ratings: RatingTable,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn write_store(&self, dir: impl AsRef<Path>) -> Result<StoreManifest> {
        let mut w = StoreWriter::create(dir, self.manifest.clone())?;
        for (site, m) in &self.matrices {
            w.add_matrix(*site, m)?;
        }
        w.finish()
    }
}

/// File names used by [`write_synth`].
pub const SYNTH_STORE_DIR: &str = "store";
pub const SYNTH_RATINGS_FILE: &str = "ratings.csv";
pub const SYNTH_TRUTH_FILE: &str = "truth.json";

/// Generates and writes `store/`, `ratings.csv` and `truth.json` under `dir`.
pub fn write_synth(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SynthData> {
    let dir = dir.as_ref();
    let data = generate(spec)?;
    data.write_store(dir.join(SYNTH_STORE_DIR))?;
    data.ratings.write_csv(dir.join(SYNTH_RATINGS_FILE))?;
    data.truth.write(dir.join(SYNTH_TRUTH_FILE))?;
    Ok(data)
}

/// Attribute questions drawn from the bundled subgroup lists so that
/// subgroup analyses resolve on synthetic data.
fn questions(m: usize) -> Vec<String> {
    let pool = all_bundled_questions();
    if m > pool.len() {
        return (0..m).map(|j| format!("synthetic attribute {j}?")).collect();
    }
    (0..m).map(|j| pool[j * pool.len() / m].to_string()).collect()
}

/// Latent directions with `u_a . u_b = rho` for planted pairs and 0 for all
/// other planted pairs.
fn latent_directions(spec: &SynthSpec) -> Result<DMatrix<f64>> {
    let p = spec.n_planted();
    let r = spec.latent();
    let mut u = DMatrix::zeros(spec.m_attributes, r);
    if p == 0 {
        return Ok(u);
    }
    let mut c = DMatrix::<f64>::identity(p, p);
    for pair in &spec.pairs {
        c[(pair.a, pair.b)] = pair.rho;
        c[(pair.b, pair.a)] = pair.rho;
    }
    let eig = SymmetricEigen::new(c);
    let tol = 1e-9;
    if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
        if min < -tol {
            return Err(Error::Infeasible(format!(
                "planted correlation matrix is not positive semi-definite (smallest eigenvalue {min:.3e})"
            )));
        }
    }
    let keep: Vec<usize> = (0..p).filter(|&k| eig.eigenvalues[k] > tol).collect();
    if keep.len() > r {
        return Err(Error::Infeasible(format!(
            "planted correlations need latent dimension >= {}, got {r}",
            keep.len()
        )));
    }
    for j in 0..p {
        for (col, &k) in keep.iter().enumerate() {
            u[(j, col)] = eig.eigenvectors[(j, k)] * eig.eigenvalues[k].sqrt();
        }
        let n = u.row(j).norm();
        u.row_mut(j).scale_mut(1.0 / n);
    }
    Ok(u)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn quintile_cuts(values: &[f64]) -> [f64; 4] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts = [0.0; 4];
    for (k, c) in cuts.iter_mut().enumerate() {
        // midpoint between the last value of bin k and the first of bin k+1
        let hi = ((k + 1) * n) / 5;
        let lo = hi.saturating_sub(1);
        *c = 0.5 * (sorted[lo] + sorted[hi.min(n - 1)]);
    }
    cuts
}

fn discretize(t: f64, cuts: &[f64; 4]) -> u8 {
    1 + cuts.iter().filter(|&&c| t > c).count() as u8
}

/// Variance of the rating and its covariance with the continuous target,
/// for `t ~ N(0, sd^2)` cut at `cuts`.
fn rating_moments(sd: f64, cuts: &[f64; 4]) -> (f64, f64) {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let tail = |c: f64| 1.0 - std.cdf(c / sd);
    let cov: f64 = cuts.iter().map(|&c| sd * std.pdf(c / sd)).sum();
    let mut var = 0.0;
    for &a in cuts {
        for &b in cuts {
            var += tail(a.max(b)) - tail(a) * tail(b);
        }
    }
    (var, cov)
}

/// `Var(E[u.z | x])` for `x = a M z + sigma e`.
fn explained_signal(u: &DVector<f64>, m: &DMatrix<f64>, a: f64, sigma: f64) -> f64 {
    let r = m.ncols();
    if a == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        // noise-free rows: the part of u visible through M
        let proj = m.clone().pseudo_inverse(1e-12).expect("pseudo-inverse") * m;
        return u.dot(&(proj * u));
    }
    let inner = DMatrix::<f64>::identity(r, r) + m.transpose() * m * (a * a / (sigma * sigma));
    let inv = inner.try_inverse().expect("positive definite");
    u.dot(u) - u.dot(&(inv * u))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let sites = spec.site_ids()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_stimuli;
    let m = spec.m_attributes;
    let r = spec.latent();
    let u = latent_directions(spec)?;

    let z = DMatrix::from_fn(n, r, |_, _| normal(&mut rng));

    // targets and ratings
    let mut ratings = vec![0u8; n * m];
    let mut cut_points = Vec::with_capacity(m);
    let planted = spec.n_planted();
    for j in 0..m {
        let t: Vec<f64> = (0..n)
            .map(|i| {
                if j < planted {
                    z.row(i).dot(&u.row(j)) + spec.sigma_rating * normal(&mut rng)
                } else {
                    normal(&mut rng)
                }
            })
            .collect();
        let cuts = quintile_cuts(&t);
        for (i, v) in t.iter().enumerate() {
            ratings[i * m + j] = discretize(*v, &cuts);
        }
        cut_points.push(cuts);
    }

    let stimuli = Stimulus::from_texts((0..n).map(|i| format!("stimulus {i:04}")));
    let table = RatingTable::new(stimuli.clone(), questions(m), ratings)?;
    let mut manifest = StoreManifest::new(stimuli, (0..spec.seeds_per_stimulus as u64).collect());
    manifest.metadata.insert("generator".into(), "probekit synth".into());
    manifest.metadata.insert(
        "synth_spec".into(),
        serde_json::to_value(spec).map_err(|e| Error::InvalidArgument(e.to_string()))?,
    );

    let a = (1.0 - spec.sigma_feature * spec.sigma_feature).sqrt();
    let sigma_f = spec.sigma_feature;
    let mut matrices = Vec::with_capacity(sites.len());
    let mut site_truth = Vec::with_capacity(sites.len());
    for &site in &sites {
        let mix = DMatrix::from_fn(spec.d, r, |_, _| normal(&mut rng) / (r as f64).sqrt());
        let signal = &z * mix.transpose() * a; // n x d
        let per = manifest.seeds_per_stimulus(site.kind);
        let mut data = Vec::with_capacity(n * per * spec.d);
        for i in 0..n {
            for _ in 0..per {
                for c in 0..spec.d {
                    data.push((signal[(i, c)] + sigma_f * normal(&mut rng)) as f32);
                }
            }
        }
        matrices.push((site, SiteMatrix::new(n * per, spec.d, data)?));

        let pinv = if a > 0.0 {
            mix.clone().pseudo_inverse(1e-12).map_err(|e| Error::Singular(e.to_string()))?
        } else {
            DMatrix::zeros(r, spec.d)
        };
        let mut weights = Vec::with_capacity(m);
        let mut floors = Vec::with_capacity(m);
        for j in 0..m {
            let uj: DVector<f64> = u.row(j).transpose();
            let w = if a > 0.0 { pinv.transpose() * &uj / a } else { DVector::zeros(spec.d) };
            weights.push(w.iter().copied().collect());
            let (sd_t, explained) = if j < planted {
                ((1.0 + spec.sigma_rating.powi(2)).sqrt(), explained_signal(&uj, &mix, a, sigma_f))
            } else {
                (1.0, 0.0)
            };
            let (var_r, cov_rt) = rating_moments(sd_t, &cut_points[j]);
            let slope = cov_rt / (sd_t * sd_t);
            floors.push((var_r - slope * slope * explained).max(0.0).sqrt());
        }
        site_truth.push(SiteTruth {
            site,
            weights,
            rmse_floor: floors,
        });
    }

    let pairs = spec
        .pairs
        .iter()
        .map(|p| PairTruth {
            a: p.a.min(p.b),
            b: p.a.max(p.b),
            rho: p.rho,
            state: if p.rho > 0.0 {
                State::Positive
            } else if p.rho < 0.0 {
                State::Negative
            } else {
                State::Disentangled
            },
        })
        .collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        planted: (0..planted).collect(),
        null: (planted..m).collect(),
        latent_weights: (0..m).map(|j| u.row(j).iter().copied().collect()).collect(),
        cut_points,
        pairs,
        sites: site_truth,
    };
    Ok(SynthData {
        manifest,
        matrices,
        ratings: table,
        truth,
    })
}
