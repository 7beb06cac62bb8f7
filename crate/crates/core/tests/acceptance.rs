//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! shown.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use probekit::cv::{grid_search, make_folds, run_probes, GridConfig, SiteData, Targets};
use probekit::data::{RatingTable, SiteId, Store};
use probekit::entangle::{cross_domain, entangle_probes, entangle_ratings, Domain, EntanglementRecord, EntanglementSet, State};
use probekit::preprocess::PcaMethod;
use probekit::probe::{ridge_fit, rmse};
use probekit::stats::{perm_test_rmse, PermutationPlan};
use probekit::synth::SynthSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{config_with_grid, leakage_check, random_store, ridge_oracle, write_matrices, Fixture};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.1}s of {:.0}s allowed", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

fn ridge_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let alphas = [0.0, 1.0, 150.0];
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let q = rng.gen_range(1..=10);
        let n = rng.gen_range(q + 2..=30);
        let alpha = alphas[i % 3];
        let x = DMatrix::from_fn(n, q, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fit = ridge_fit(&x, &y, alpha).expect("fit");
        let (beta, c) = ridge_oracle(&x, &y, alpha);
        let diff: f64 = fit.beta.iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + (fit.intercept - c).powi(2);
        let scale: f64 = beta.iter().map(|b| b * b).sum::<f64>() + c * c;
        worst = worst.max((diff / scale).sqrt());
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(10));
    outcome(worst <= 1e-6 && fast, format!("20 instances, worst relative error {worst:.2e} (limit 1e-6), {t}"))
}

fn hand_cases() -> Outcome {
    let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
    let fit = ridge_fit(&x, &[2.0, 4.0, 6.0], 1.0).expect("fit");
    let e_beta = (fit.beta[0] - 4.0 / 3.0).abs();
    let e_c = (fit.intercept - 4.0 / 3.0).abs();
    let r = rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).expect("rmse");
    let e_r = (r - (2.0f64 / 3.0).sqrt()).abs();
    outcome(
        e_beta <= 1e-10 && e_c <= 1e-10 && e_r <= 1e-12,
        format!("beta error {e_beta:.1e}, c error {e_c:.1e} (limit 1e-10); rmse error {e_r:.1e} (limit 1e-12)"),
    )
}

fn permutation_calibration() -> Outcome {
    let start = Instant::now();
    let base = PermutationPlan::new(2500, 77).expect("plan");
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut ps = Vec::with_capacity(1000);
    for trial in 0..1000 {
        let y: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let y_hat: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        ps.push(perm_test_rmse(&y, &y_hat, &base.derive(&["calibration", &trial.to_string()])).expect("test"));
    }
    let frac = ps.iter().filter(|&&p| p < 0.05).count() as f64 / ps.len() as f64;
    let min = ps.iter().copied().fold(f64::INFINITY, f64::min);
    ps.sort_by(f64::total_cmp);
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / 1000.0 - p).abs().max((p - i as f64 / 1000.0).abs()))
        .fold(0.0, f64::max);
    let (fast, t) = within(start.elapsed(), Duration::from_secs(300));
    outcome(
        (0.03..=0.07).contains(&frac) && min >= 1.0 / 2501.0 && fast,
        format!("fraction p<0.05 = {frac:.3} (need 0.03..0.07), min p = {min:.2e} (need >= {:.2e}), KS = {ks:.3}, {t}", 1.0 / 2501.0),
    )
}

fn planted_signal_recovery() -> Outcome {
    let start = Instant::now();
    let replicates = 10;
    let (mut planted_sig, mut planted_n, mut null_sig, mut null_n) = (0usize, 0usize, 0usize, 0usize);
    let (mut rmse_sum, mut floor_sum) = (0.0, 0.0);
    let mut worst_attr_ratio: f64 = 0.0;
    for rep in 0..replicates {
        let spec = SynthSpec {
            n_stimuli: 200,
            seeds_per_stimulus: 5,
            sites: vec!["clip_final".into(), "unet_output:1".into()],
            d: 256,
            m_attributes: 20,
            null_attributes: 10,
            latent_dim: None,
            sigma_feature: 0.3,
            sigma_rating: 0.12,
            pairs: vec![],
            seed: 500 + rep,
        };
        let fx = Fixture::new(&spec);
        let mut config = config_with_grid(vec![0.1, 1.0, 10.0, 100.0, 1000.0], vec![4, 8, 16, 32, 64], 2500);
        config.permutations.seed = rep;
        config.fold_seed = rep;
        let run = run_probes(&fx.store, &fx.targets(), &fx.store.manifest().site_ids(), &config).expect("run");
        let truth = &fx.data.truth;
        for site in fx.store.manifest().site_ids() {
            let floors = &truth.site(site).expect("site truth").rmse_floor;
            for &j in &truth.planted {
                let recs: Vec<_> = run.records.iter().filter(|r| r.site == site && r.attribute_id == j).collect();
                let mean = recs.iter().map(|r| r.result.rmse).sum::<f64>() / recs.len() as f64;
                worst_attr_ratio = worst_attr_ratio.max((mean / floors[j] - 1.0).abs());
            }
        }
        for r in &run.records {
            let floor = truth.site(r.site).expect("site truth").rmse_floor[r.attribute_id];
            if truth.planted.contains(&r.attribute_id) {
                planted_n += 1;
                planted_sig += usize::from(r.significant());
                rmse_sum += r.result.rmse;
                floor_sum += floor;
            } else {
                null_n += 1;
                null_sig += usize::from(r.significant());
            }
        }
    }
    let sig_rate = planted_sig as f64 / planted_n as f64;
    let ratio = rmse_sum / floor_sum;
    let null_rate = null_sig as f64 / null_n as f64;
    let (fast, t) = within(start.elapsed(), Duration::from_secs(900));
    outcome(
        sig_rate >= 0.95 && (0.8..=1.2).contains(&ratio) && (0.02..=0.08).contains(&null_rate) && fast,
        format!(
            "{replicates} stores: planted significant {sig_rate:.3} of {planted_n} (need >= 0.95); \
             held-out RMSE / floor = {ratio:.3} (mean floor {:.3}, need 0.8..1.2, largest per-attribute deviation {worst_attr_ratio:.3}); \
             null significant {null_rate:.3} of {null_n} (need 0.02..0.08); {t}",
            floor_sum / planted_n as f64
        ),
    )
}

fn no_leakage() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        n_stimuli: 100,
        seeds_per_stimulus: 3,
        sites: vec!["clip_hidden:1..2".into(), "clip_final".into(), "unet_bottleneck:1".into(), "unet_output:1..2".into()],
        d: 64,
        ..SynthSpec::default()
    };
    let fx = Fixture::new(&spec);
    let mut config = config_with_grid(vec![1.0, 10.0, 100.0], vec![4, 8, 16], 50);
    config.keep_models = true;
    let run = run_probes(&fx.store, &fx.targets(), &fx.store.manifest().site_ids(), &config).expect("run");
    let scratch = tempfile::tempdir().expect("tempdir");
    let (compared, mismatched) = leakage_check(&fx.store, fx.ratings(), &config, &run.models, scratch.path());
    let (fast, t) = within(start.elapsed(), Duration::from_secs(300));
    outcome(
        compared == run.models.len() && compared > 0 && mismatched == 0 && fast,
        format!("{compared} serialized models refit without held-out rows, {mismatched} differ; {t}"),
    )
}

/// Synthetic ratings with column `dup` a copy of attribute 0 and column
/// `rev` the reversal `6 - y` of attribute 1.
fn with_duplicate_and_reversal(table: &RatingTable) -> RatingTable {
    let (n, m) = (table.n(), table.m());
    let mut questions: Vec<String> = table.attributes().iter().map(|a| a.question.clone()).collect();
    questions.push("duplicate of attribute 0?".into());
    questions.push("reversal of attribute 1?".into());
    let mut ratings = Vec::with_capacity(n * (m + 2));
    for i in 0..n {
        for j in 0..m {
            ratings.push(table.get(i, j));
        }
        ratings.push(table.get(i, 0));
        ratings.push(6 - table.get(i, 1));
    }
    RatingTable::new(table.stimuli().to_vec(), questions, ratings).expect("table")
}

fn entanglement_oracle() -> Outcome {
    let plan = PermutationPlan::new(2500, 5).expect("plan");
    let mut notes = Vec::new();
    let mut pass = true;

    // duplicated and reversed attributes, both domains
    let spec = SynthSpec {
        n_stimuli: 150,
        d: 64,
        m_attributes: 12,
        null_attributes: 0,
        pairs: vec![],
        sites: vec!["clip_final".into()],
        ..SynthSpec::default()
    };
    let fx = Fixture::new(&spec);
    let table = with_duplicate_and_reversal(fx.ratings());
    let (dup, rev) = (table.m() - 2, table.m() - 1);
    let ids: Vec<usize> = (0..table.m()).collect();
    let columns: Vec<Vec<f64>> = ids.iter().map(|&j| table.column(j)).collect();
    let human = entangle_ratings(&ids, &columns, &plan).expect("human");
    let h_dup = human.get(0, dup).map(|r| r.state);
    let h_rev = human.get(1, rev).map(|r| r.state);
    let targets = Targets::align(&fx.store, &table, None).expect("targets");
    let mut config = config_with_grid(vec![1.0], vec![24], 100);
    config.keep_models = true;
    let run = run_probes(&fx.store, &targets, &[SiteId::clip_final()], &config).expect("run");
    let (mut m_dup, mut m_rev) = (0, 0);
    for set in &run.models {
        let model = entangle_probes(set, &plan).expect("model");
        m_dup += usize::from(model.get(0, dup).map(|r| r.state) == Some(State::Positive));
        m_rev += usize::from(model.get(1, rev).map(|r| r.state) == Some(State::Negative));
    }
    let ok = h_dup == Some(State::Positive) && h_rev == Some(State::Negative) && m_dup == 5 && m_rev == 5;
    pass &= ok;
    notes.push(format!(
        "duplicate: human {:?}, model positive in {m_dup}/5 folds; reversal: human {:?}, model negative in {m_rev}/5 folds",
        h_dup, h_rev
    ));

    // independent vectors
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let m = 46;
    let vectors: Vec<Vec<f64>> = (0..m).map(|_| (0..100).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let ids: Vec<usize> = (0..m).collect();
    let set = entangle_ratings(&ids, &vectors, &plan).expect("independent");
    let b = set.state_percentages();
    let ok = (87.0..=93.0).contains(&b.disentangled);
    pass &= ok;
    notes.push(format!(
        "{} independent pairs: {:.1}% disentangled (need 87..93), {:.1}% positive, {:.1}% negative",
        b.n_pairs, b.disentangled, b.positive, b.negative
    ));

    // enumerated toy: one pair each way, two agreeing
    let rec = |a, b, domain, state| EntanglementRecord { a, b, domain, similarity: 0.0, p_value: 0.5, state };
    let human = EntanglementSet {
        records: vec![
            rec(0, 1, Domain::Human, State::Disentangled),
            rec(0, 2, Domain::Human, State::Negative),
            rec(0, 3, Domain::Human, State::Positive),
            rec(1, 2, Domain::Human, State::Disentangled),
        ],
        skipped: vec![],
    };
    let model = EntanglementSet {
        records: vec![
            rec(0, 1, Domain::Model, State::Positive),
            rec(0, 2, Domain::Model, State::Disentangled),
            rec(0, 3, Domain::Model, State::Positive),
            rec(1, 2, Domain::Model, State::Disentangled),
        ],
        skipped: vec![],
    };
    let s = cross_domain(&model, &human).expect("toy");
    let got = (s.pct_humans_disentangle_more, s.pct_probes_disentangle_more, s.pct_agreement);
    let ok = got == (25.0, 25.0, 50.0);
    pass &= ok;
    notes.push(format!("toy cross-domain {got:?} (need (25, 25, 50))"));
    outcome(pass, notes.join("; "))
}

fn grid_search_cases() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let spec = SynthSpec {
        n_stimuli: 80,
        d: 48,
        m_attributes: 6,
        null_attributes: 6,
        pairs: vec![],
        sites: vec!["clip_hidden:1..2".into()],
        ..SynthSpec::default()
    };
    let fx = Fixture::new(&spec);
    let targets = fx.targets();
    let sites: Vec<SiteData> = fx
        .store
        .manifest()
        .site_ids()
        .into_iter()
        .map(|s| SiteData::load(&fx.store, s).expect("load"))
        .collect();
    let refs: Vec<&SiteData> = sites.iter().collect();
    let folds = make_folds(&fx.store.manifest().stimuli, 5, 3).expect("folds");
    let inner = folds.inner(0);

    let single = GridConfig::new(vec![37.0], vec![7]).expect("grid");
    let s = grid_search(&refs, &targets, &inner, &single, PcaMethod::Auto).expect("search");
    let ok = s.alpha == 37.0 && s.q == 7;
    pass &= ok;
    notes.push(format!("single point -> (alpha {}, q {})", s.alpha, s.q));

    // targets unrelated to 40 components fitted on 48 rows: more shrinkage
    // always validates better
    let alphas = vec![1e-3, 1e-1, 1e1, 1e3, 1e5, 1e7];
    let monotone = GridConfig::new(alphas.clone(), vec![40]).expect("grid");
    let s = grid_search(&refs, &targets, &inner, &monotone, PcaMethod::Auto).expect("search");
    let decreasing = s.scores[0].windows(2).all(|w| w[1] < w[0]);
    let ok = decreasing && s.alpha == *alphas.last().unwrap();
    pass &= ok;
    notes.push(format!(
        "monotone case: scores strictly decreasing = {decreasing}, selected alpha {} (max {})",
        s.alpha,
        alphas.last().unwrap()
    ));

    let grid = GridConfig::new(vec![0.5, 5.0, 50.0], vec![2, 4, 8]).expect("grid");
    let a = grid_search(&refs, &targets, &inner, &grid, PcaMethod::Auto).expect("search");
    let b = grid_search(&refs, &targets, &inner, &grid, PcaMethod::Auto).expect("search");
    let ok = a == b;
    pass &= ok;
    notes.push(format!("repeat search identical = {ok} (alpha {}, q {})", a.alpha, a.q));
    outcome(pass, notes.join("; "))
}

fn store_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let root = tempfile::tempdir().expect("tempdir");
    let mut identical = 0;
    let (mut flips, mut detected) = (0, 0);
    for trial in 0..100 {
        let (manifest, sites) = random_store(&mut rng);
        let a = root.path().join(format!("a{trial}"));
        let b = root.path().join(format!("b{trial}"));
        let written = write_matrices(&a, &manifest, &sites);
        let store = Store::open(&a).expect("open");
        let reread: Vec<_> = written.sites.iter().map(|e| (e.site, store.load(&e.site).expect("load"))).collect();
        write_matrices(&b, store.manifest(), &reread);
        let mut same = std::fs::read(a.join("manifest.json")).ok() == std::fs::read(b.join("manifest.json")).ok();
        for e in &written.sites {
            same &= std::fs::read(a.join(&e.file)).expect("blob") == std::fs::read(b.join(&e.file)).expect("blob");
            let original = sites.iter().find(|(s, _)| *s == e.site).expect("site");
            let loaded = &reread.iter().find(|(s, _)| *s == e.site).expect("site").1;
            same &= original.1.as_slice().iter().map(|v| v.to_bits()).eq(loaded.as_slice().iter().map(|v| v.to_bits()));
        }
        identical += usize::from(same);

        // corrupt every byte of one blob in turn (all bytes for the first
        // trials, a random sample afterwards)
        if let Some(e) = written.sites.first() {
            let path = a.join(&e.file);
            let clean = std::fs::read(&path).expect("blob");
            let positions: Vec<usize> = if trial < 10 {
                (0..clean.len()).collect()
            } else {
                (0..20).map(|_| rng.gen_range(0..clean.len())).collect()
            };
            for pos in positions {
                let mut bad = clean.clone();
                bad[pos] ^= 1 << rng.gen_range(0..8);
                std::fs::write(&path, &bad).expect("write");
                flips += 1;
                detected += usize::from(store.load(&e.site).is_err());
            }
            std::fs::write(&path, &clean).expect("restore");
        }
    }
    outcome(
        identical == 100 && detected == flips,
        format!("{identical}/100 randomized stores round-trip byte-identically; {detected}/{flips} corrupted bytes detected"),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("ridge oracle equivalence", ridge_oracle_equivalence),
        ("hand cases", hand_cases),
        ("permutation calibration", permutation_calibration),
        ("planted-signal recovery", planted_signal_recovery),
        ("no leakage", no_leakage),
        ("entanglement oracle", entanglement_oracle),
        ("grid search determinism and selection", grid_search_cases),
        ("store format round trip and corruption", store_format),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
