#![allow(dead_code)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use probekit::cv::{fit_fold_models, make_folds, PipelineConfig, SiteData, Targets, GridConfig};
use probekit::data::{RatingTable, SiteGroup, SiteId, SiteKind, SiteMatrix, Stimulus, Store, StoreManifest, StoreWriter};
use probekit::probe::ProbeSet;
use probekit::synth::{write_synth, SynthData, SynthSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Minimizes `alpha |b|^2 + sum (y - x b - c)^2` by conjugate gradient on
/// the uncentered normal equations in `(b, c)`.
pub fn ridge_oracle(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let (n, q) = x.shape();
    let mut a = DMatrix::zeros(q + 1, q + 1);
    let mut b = DVector::zeros(q + 1);
    for i in 0..n {
        let row = x.row(i).transpose().into_owned().insert_row(q, 1.0);
        a += &row * row.transpose();
        b += &row * y[i];
    }
    for k in 0..q {
        a[(k, k)] += alpha;
    }
    let mut w = DVector::zeros(q + 1);
    let mut r = &b - &a * &w;
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..10 * (q + 1) {
        if rs.sqrt() <= 1e-15 * b.norm().max(1.0) {
            break;
        }
        let ap = &a * &p;
        let step = rs / p.dot(&ap);
        w += step * &p;
        r -= step * &ap;
        let next = r.dot(&r);
        p = &r + (next / rs) * &p;
        rs = next;
    }
    (w.rows(0, q).iter().copied().collect(), w[q])
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// A random valid store layout with random finite contents.
pub fn random_store(rng: &mut ChaCha8Rng) -> (StoreManifest, Vec<(SiteId, SiteMatrix)>) {
    let n = rng.gen_range(1..6);
    let seeds: Vec<u64> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..1000)).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let manifest = StoreManifest::new(Stimulus::from_texts((0..n).map(|i| format!("noun {i}"))), seeds);
    let mut sites = Vec::new();
    for kind in SiteKind::ALL {
        if rng.gen_bool(0.6) {
            let index = match kind {
                SiteKind::ClipFinal => 0,
                SiteKind::ClipHidden => rng.gen_range(1..=12),
                _ => rng.gen_range(1..=50),
            };
            let site = SiteId::new(kind, index).unwrap();
            let rows = manifest.expected_rows(kind);
            let d = rng.gen_range(1..9);
            let data = (0..rows * d)
                .map(|_| match rng.gen_range(0..10) {
                    0 => -0.0,
                    1 => f32::MIN_POSITIVE / 4.0,
                    2 => f32::MAX,
                    _ => rng.gen_range(-1e6f32..1e6),
                })
                .collect();
            sites.push((site, SiteMatrix::new(rows, d, data).unwrap()));
        }
    }
    (manifest, sites)
}

pub fn write_matrices(dir: &Path, manifest: &StoreManifest, sites: &[(SiteId, SiteMatrix)]) -> StoreManifest {
    let mut w = StoreWriter::create(dir, manifest.clone()).unwrap();
    for (s, m) in sites {
        w.add_matrix(*s, m).unwrap();
    }
    w.finish().unwrap()
}

pub struct Fixture {
    pub dir: TempDir,
    pub data: SynthData,
    pub store: Store,
}

impl Fixture {
    pub fn new(spec: &SynthSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = write_synth(spec, dir.path()).unwrap();
        let store = Store::open(dir.path().join("store")).unwrap();
        Fixture { dir, data, store }
    }

    pub fn ratings(&self) -> &RatingTable {
        &self.data.ratings
    }

    pub fn targets(&self) -> Targets {
        Targets::align(&self.store, &self.data.ratings, None).unwrap()
    }
}

/// Same grid for every site group.
pub fn config_with_grid(alphas: Vec<f64>, components: Vec<usize>, permutations: usize) -> PipelineConfig {
    let grid = GridConfig::new(alphas, components).unwrap();
    let mut c = PipelineConfig::default();
    for g in SiteGroup::ALL {
        c.grids.insert(g, grid.clone());
    }
    c.permutations = probekit::stats::PermutationPlan::new(permutations, 11).unwrap();
    c
}

/// Refits every outer fold of `models` from a copy of the store that holds
/// only that fold's training stimuli, and reports whether all serialized
/// models are byte-identical. Returns `(models compared, mismatches)`.
pub fn leakage_check(
    store: &Store,
    ratings: &RatingTable,
    config: &PipelineConfig,
    models: &[ProbeSet],
    scratch: &Path,
) -> (usize, usize) {
    let folds = make_folds(&store.manifest().stimuli, config.outer_folds, config.fold_seed).unwrap();
    let table_rows = ratings.rows_for(&store.manifest().stimuli).unwrap();
    let (mut compared, mut mismatched) = (0, 0);
    for f in 0..folds.k() {
        let keep = folds.train(f);
        let reduced = store.write_subset(scratch.join(format!("fold{f}")), &keep).unwrap();
        let reduced_ratings = ratings.subset(&keep.iter().map(|&s| table_rows[s]).collect::<Vec<_>>()).unwrap();
        let targets = Targets::align(&reduced, &reduced_ratings, None).unwrap();
        let position = |s: usize| keep.binary_search(&s).unwrap();
        let remapped: Vec<Vec<usize>> = folds
            .inner(f)
            .iter()
            .map(|fold| fold.iter().map(|&s| position(s)).collect())
            .collect();
        let mut by_group: std::collections::BTreeMap<SiteGroup, Vec<SiteData>> = Default::default();
        for s in reduced.manifest().site_ids() {
            by_group.entry(s.kind.group()).or_default().push(SiteData::load(&reduced, s).unwrap());
        }
        for sites in by_group.values() {
            let refs: Vec<&SiteData> = sites.iter().collect();
            let (_, sets) = fit_fold_models(&refs, &targets, &remapped, f, config).unwrap();
            for set in sets {
                let original = models.iter().find(|m| m.site == set.site && m.fold == f).expect("model kept");
                compared += 1;
                if original.to_bytes() != set.to_bytes() {
                    mismatched += 1;
                }
            }
        }
    }
    (compared, mismatched)
}
