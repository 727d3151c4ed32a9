//! Property checks over every module. Each runs as its own test in
//! `properties.rs` and all of them run together for the acceptance suite.

use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;
use scvi::corpus::{load_corpus, minibatches, split, Corpus, OovPolicy, Sampling, Vocab, VocabPolicy};
use scvi::emissions::{Categorical, EmissionFamily, EmissionPrior, EmissionStats};
use scvi::engine::{initialize_stats, predictive_log_likelihood, process_minibatch, Executor, ModelMode, Schedule};
use scvi::hdp::{expected_tables, update_hdp, HdpPosterior, HdpPriors, TableInputs, TableStats};
use scvi::messages::{forward_backward, forward_loglik, local_stats, SurrogateParams};
use scvi::metrics::MetricRecord;
use scvi::persist::{decode, encode};
use scvi::special::{beta_expect_logs, digamma, gamma_expect, gamma_geo_expect, BetaParams, GammaParams};
use scvi::svi::{svi_step, DirichletRows, SviPriors};
use scvi::synthetic::{generate_synthetic, SyntheticSpec};
use scvi::train::{Algorithm, TrainConfig, Trainer};

use super::{enumerate_paths, log_forward_backward, random_params, random_sequence, rel_close, ll_close, rng, HdpState};

pub const CASES: u32 = 128;

pub type Check = fn() -> Result<(), String>;

pub fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Every property, by name.
pub const ALL: &[(&str, Check)] = &[
    ("beta log expectations negative and symmetric", beta_logs),
    ("gamma geometric mean below arithmetic mean", gamma_means),
    ("digamma recurrence", digamma_recurrence),
    ("geometric expectation product rule", product_rule),
    ("emission rows move toward uniform", emission_scale),
    ("emission rows approach proportions", emission_large_counts),
    ("emission rows independent", emission_row_independence),
    ("emission rows normalized", emission_normalized),
    ("forward-backward equals path enumeration", fb_enumeration),
    ("state relabelling", label_equivariance),
    ("pairwise and unary marginals agree", marginal_consistency),
    ("scaled and log-space likelihoods agree", scaled_vs_log),
    ("local statistics conserve mass", local_mass),
    ("minibatch update is a convex combination", convex_update),
    ("batch statistics independent of order and threads", order_and_threads),
    ("held-out likelihood is a pure function", pure_evaluation),
    ("initialization", initialization),
    ("training run invariants", training_run),
    ("tables bounded by customers", tables_bounded),
    ("tables monotone and concave in N", tables_in_n),
    ("full-step HDP update idempotent", hdp_idempotent),
    ("HDP cache coherence", hdp_cache),
    ("SVI rows stay above the prior", svi_above_prior),
    ("minibatch streams", minibatch_streams),
    ("corpus save and load", corpus_round_trip),
    ("split is a partition", split_partition),
    ("synthetic transition frequencies", synthetic_transitions),
    ("metrics rows round trip", metrics_round_trip),
    ("model persistence round trip", persistence_round_trip),
];

pub fn beta_logs() -> Result<(), String> {
    run((1e-3f64..1e3, 1e-3f64..1e3), |(u, v)| {
        let (a, b) = beta_expect_logs(BetaParams::new(u, v).unwrap());
        prop_assert!(a < 0.0 && b < 0.0, "({a}, {b})");
        let (c, d) = beta_expect_logs(BetaParams::new(v, u).unwrap());
        prop_assert_eq!((a, b), (d, c));
        Ok(())
    })
}

pub fn gamma_means() -> Result<(), String> {
    run((1e-3f64..1e4, 1e-3f64..1e3), |(a, b)| {
        let p = GammaParams::new(a, b).unwrap();
        prop_assert!(gamma_geo_expect(p) < gamma_expect(p));
        Ok(())
    })
}

pub fn digamma_recurrence() -> Result<(), String> {
    // Log-uniform over [0.1, 1e6].
    run(-1.0f64..6.0, |e| {
        let x = 10f64.powf(e);
        let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        prop_assert!(d.abs() <= 1e-10, "x = {x}: {d:e}");
        Ok(())
    })
}

pub fn random_hdp(seed: u64, k: usize) -> HdpPosterior {
    let mut r = rng(seed);
    let sticks = (0..k)
        .map(|_| BetaParams::new(r.random_range(0.1..50.0), r.random_range(0.1..50.0)).unwrap())
        .collect();
    let alpha = GammaParams::new(r.random_range(0.5..20.0), r.random_range(0.1..5.0)).unwrap();
    let gamma = GammaParams::new(r.random_range(0.5..20.0), r.random_range(0.1..5.0)).unwrap();
    HdpPosterior::new(sticks, alpha, gamma).unwrap()
}

pub fn product_rule() -> Result<(), String> {
    run((1usize..=8, any::<u64>()), |(k, seed)| {
        let post = random_hdp(seed, k);
        let g_alpha = gamma_geo_expect(post.alpha());
        let mut rest = 1.0;
        for (j, s) in post.sticks().iter().enumerate() {
            let (el, el1m) = beta_expect_logs(*s);
            let product = g_alpha * el.exp() * rest;
            prop_assert!(rel_close(post.geo_alpha_pi()[j], product, 1e-12), "{j}: {} vs {product}", post.geo_alpha_pi()[j]);
            rest *= el1m.exp();
        }
        Ok(())
    })
}

pub fn stats_row(values: &[f64]) -> EmissionStats {
    EmissionStats::from_expected(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
}

pub fn kl_to_uniform(p: &Array1<f64>) -> f64 {
    let v = p.len() as f64;
    p.iter().map(|&x| x * (x * v).ln()).sum()
}

pub fn emission_scale() -> Result<(), String> {
    run(prop::collection::vec(0.0f64..50.0, 2..20), |counts| {
        prop_assume!(counts.iter().any(|&c| (c - counts[0]).abs() > 1e-3));
        let fam = Categorical::new(EmissionPrior::symmetric(counts.len(), 0.1).unwrap()).unwrap();
        let mut last = f64::INFINITY;
        for c in [0.0, 1.0, 10.0, 100.0] {
            let shifted: Vec<f64> = counts.iter().map(|x| x + c).collect();
            let stats = stats_row(&shifted);
            prop_assert!((stats.counts[0] - (counts.iter().sum::<f64>() + c * counts.len() as f64)).abs() < 1e-8);
            let row = fam.surrogate_row(&stats, 0).unwrap();
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            let kl = kl_to_uniform(&row);
            prop_assert!(kl < last, "c = {c}: {kl} !< {last}");
            last = kl;
        }
        Ok(())
    })
}

pub fn emission_large_counts() -> Result<(), String> {
    run(prop::collection::vec(0.01f64..1.0, 2..20), |w| {
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        let fam = Categorical::new(EmissionPrior::symmetric(p.len(), 0.1).unwrap()).unwrap();
        let stats = stats_row(&p.iter().map(|x| x * 1e6).collect::<Vec<_>>());
        let row = fam.surrogate_row(&stats, 0).unwrap();
        for (a, b) in row.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-4);
        }
        Ok(())
    })
}

pub fn emission_row_independence() -> Result<(), String> {
    run((2usize..6, 2usize..12, any::<u64>()), |(k, v, seed)| {
        let mut r = rng(seed);
        let base = Array2::from_shape_simple_fn((k, v), || r.random_range(0.0..20.0));
        let fam = Categorical::new(EmissionPrior::symmetric(v, 0.1).unwrap()).unwrap();
        let target = r.random_range(0..k);
        let mut changed = base.clone();
        changed.row_mut(target).mapv_inplace(|x| x * 3.0 + 1.0);
        let (a, b) = (EmissionStats::from_expected(base), EmissionStats::from_expected(changed));
        for j in (0..k).filter(|&j| j != target) {
            prop_assert_eq!(fam.surrogate_row(&a, j).unwrap(), fam.surrogate_row(&b, j).unwrap());
        }
        Ok(())
    })
}

pub fn emission_normalized() -> Result<(), String> {
    run((prop::collection::vec(0.0f64..1e4, 2..50), 1e-3f64..10.0), |(counts, prior)| {
        let fam = Categorical::new(EmissionPrior::symmetric(counts.len(), prior).unwrap()).unwrap();
        let row = fam.surrogate_row(&stats_row(&counts), 0).unwrap();
        prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|&x| x > 0.0 && x < 1.0));
        Ok(())
    })
}

/// Random surrogate parameters and a sequence.
pub fn chain_case(max_k: usize, max_t: usize, max_v: usize) -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1..=max_k, 1..=max_t, 1..=max_v, any::<u64>())
}

pub fn build_case(k: usize, t: usize, v: usize, seed: u64) -> (SurrogateParams, Vec<u32>) {
    let mut r = rng(seed);
    let params = random_params(&mut r, k, v);
    let seq = random_sequence(&mut r, t, v);
    (params, seq)
}

/// Compares forward–backward with enumeration; used by criterion 1 as well.
pub fn compare_with_enumeration(params: &SurrogateParams, seq: &[u32], tol: f64) -> Result<(), String> {
    let post = forward_backward(params, seq).map_err(|e| e.to_string())?;
    let want = enumerate_paths(&params.trans, &params.emit, seq);
    if !ll_close(post.loglik, want.loglik, tol) {
        return Err(format!("loglik {} vs {}", post.loglik, want.loglik));
    }
    for (a, b) in post.unary.iter().zip(want.unary.iter()) {
        if !rel_close(*a, *b, tol) {
            return Err(format!("unary {a} vs {b}"));
        }
    }
    for (a, b) in post.pairwise.iter().zip(want.pairwise.iter()) {
        if !rel_close(*a, *b, tol) {
            return Err(format!("pairwise {a} vs {b}"));
        }
    }
    Ok(())
}

pub fn fb_enumeration() -> Result<(), String> {
    run(chain_case(3, 8, 5), |(k, t, v, seed)| {
        let (params, seq) = build_case(k, t, v, seed);
        compare_with_enumeration(&params, &seq, 1e-10).map_err(TestCaseError::fail)
    })
}

pub fn label_equivariance() -> Result<(), String> {
    run((chain_case(4, 10, 6), any::<u64>()), |((k, t, v, seed), perm_seed)| {
        let (params, seq) = build_case(k, t, v, seed);
        let mut perm: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng(perm_seed));
        let mut trans = Array2::zeros((k + 1, k));
        let mut emit = Array2::zeros((k, v));
        for j in 0..k {
            trans[[0, perm[j]]] = params.trans[[0, j]];
            emit.row_mut(perm[j]).assign(&params.emit.row(j));
            for i in 0..k {
                trans[[perm[i] + 1, perm[j]]] = params.trans[[i + 1, j]];
            }
        }
        let permuted = SurrogateParams::new(trans, emit).unwrap();
        let a = forward_backward(&params, &seq).unwrap();
        let b = forward_backward(&permuted, &seq).unwrap();
        prop_assert!(ll_close(a.loglik, b.loglik, 1e-12));
        for s in 0..t {
            for (j, &pj) in perm.iter().enumerate() {
                prop_assert!((a.unary[[s, j]] - b.unary[[s, pj]]).abs() < 1e-12);
            }
        }
        Ok(())
    })
}

pub fn marginal_consistency() -> Result<(), String> {
    run(chain_case(8, 40, 10), |(k, t, v, seed)| {
        let (params, seq) = build_case(k, t, v, seed);
        let post = forward_backward(&params, &seq).unwrap();
        for s in 0..t {
            prop_assert!((post.unary.row(s).sum() - 1.0).abs() < 1e-8);
            let slice = post.pairwise.index_axis(Axis(0), s);
            prop_assert!((slice.sum() - 1.0).abs() < 1e-8);
            let into = slice.sum_axis(Axis(0));
            for j in 0..k {
                prop_assert!((into[j] - post.unary[[s, j]]).abs() < 1e-8);
            }
            if s > 0 {
                for i in 0..k {
                    prop_assert!((slice.row(i + 1).sum() - post.unary[[s - 1, i]]).abs() < 1e-8);
                }
            }
        }
        Ok(())
    })
}

pub fn scaled_vs_log() -> Result<(), String> {
    run(chain_case(10, 200, 30), |(k, t, v, seed)| {
        let (params, seq) = build_case(k, t, v, seed);
        let a = forward_loglik(&params, &seq).unwrap();
        let b = log_forward_backward(&params.trans, &params.emit, &seq).loglik;
        prop_assert!(ll_close(a, b, 1e-9), "{a} vs {b}");
        Ok(())
    })
}

pub fn local_mass() -> Result<(), String> {
    run(chain_case(6, 50, 10), |(k, t, v, seed)| {
        let (params, seq) = build_case(k, t, v, seed);
        let post = forward_backward(&params, &seq).unwrap();
        let stats = local_stats(&post, &seq, v).unwrap();
        prop_assert!((stats.trans.sum() - t as f64).abs() < 1e-9);
        prop_assert!((stats.emit.sum() - t as f64).abs() < 1e-9);
        prop_assert!((stats.trans.row(0).sum() - 1.0).abs() < 1e-9);
        Ok(())
    })
}

pub fn random_batch(r: &mut impl Rng, m: usize, v: usize) -> Vec<Vec<u32>> {
    (0..m)
        .map(|_| {
            let len = r.random_range(1..30);
            random_sequence(r, len, v)
        })
        .collect()
}

pub fn convex_update() -> Result<(), String> {
    run((1usize..8, 1usize..10, 1usize..20, 0u64..200, 0.5f64..=1.0, any::<u64>()), |(k, v, m, step, kappa, seed)| {
        let mut r = rng(seed);
        let batch = random_batch(&mut r, m, v);
        let refs: Vec<&[u32]> = batch.iter().map(|s| s.as_slice()).collect();
        let n = m + r.random_range(0..1000);
        let stats = initialize_stats(k, v, r.random_range(1..5000), seed).unwrap();
        let mut sched = Schedule::new(kappa, m, m).unwrap();
        sched.step = step;
        let rho = sched.step_size();
        let prior = EmissionPrior::symmetric(v, 0.1).unwrap();
        let next = process_minibatch(&stats, &refs, n, &mut sched, &ModelMode::FiniteHmm { prior_count: 0.1 }, &prior).unwrap();
        prop_assert_eq!(sched.step, step + 1);
        prop_assert!(next.trans.iter().chain(next.emit.expected.iter()).all(|&x| x >= 0.0 && x.is_finite()));
        let tokens: usize = batch.iter().map(Vec::len).sum();
        let fresh = n as f64 / m as f64 * tokens as f64;
        let want_t = (1.0 - rho) * stats.transition_mass() + rho * fresh;
        let want_e = (1.0 - rho) * stats.emission_mass() + rho * fresh;
        prop_assert!(rel_close(next.transition_mass(), want_t, 1e-8), "{} vs {want_t}", next.transition_mass());
        prop_assert!(rel_close(next.emission_mass(), want_e, 1e-8));
        Ok(())
    })
}

pub fn order_and_threads() -> Result<(), String> {
    run((1usize..6, 1usize..8, 1usize..40, any::<u64>()), |(k, v, m, seed)| {
        let mut r = rng(seed);
        let params = random_params(&mut r, k, v);
        let batch = random_batch(&mut r, m, v);
        let refs: Vec<&[u32]> = batch.iter().map(|s| s.as_slice()).collect();
        let seq_exec = Executor::sequential();
        let a = seq_exec.infer_batch(&params, &refs, true).unwrap();
        let again = seq_exec.infer_batch(&params, &refs, true).unwrap();
        prop_assert!(a == again, "sequential run not bit-identical");

        let mut shuffled = refs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut r);
        let b = seq_exec.infer_batch(&params, &shuffled, true).unwrap();
        let c = Executor::new(4).unwrap().infer_batch(&params, &refs, true).unwrap();
        for other in [&b, &c] {
            for (x, y) in a.local.trans.iter().zip(other.local.trans.iter()).chain(a.local.emit.iter().zip(other.local.emit.iter())) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
            let (ta, tb) = (a.tables.as_ref().unwrap(), other.tables.as_ref().unwrap());
            for (x, y) in ta.counts.iter().zip(tb.counts.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
        Ok(())
    })
}

pub fn pure_evaluation() -> Result<(), String> {
    run((1usize..6, 1usize..8, any::<u64>(), any::<bool>()), |(k, v, seed, hdp)| {
        let mut r = rng(seed);
        let heldout = random_batch(&mut r, 5, v);
        let stats = initialize_stats(k, v, 100, seed).unwrap();
        let mode = if hdp {
            ModelMode::HdpHmm(random_hdp(seed, k))
        } else {
            ModelMode::FiniteHmm { prior_count: 0.1 }
        };
        let prior = EmissionPrior::symmetric(v, 0.1).unwrap();
        let a = predictive_log_likelihood(&stats, &mode, &prior, &heldout).unwrap();
        let b = predictive_log_likelihood(&stats, &mode, &prior, &heldout).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        Ok(())
    })
}

pub fn initialization() -> Result<(), String> {
    run((1usize..20, 1usize..50, 1usize..100_000, any::<u64>()), |(k, v, tokens, seed)| {
        let a = initialize_stats(k, v, tokens, seed).unwrap();
        let b = initialize_stats(k, v, tokens, seed).unwrap();
        prop_assert!(a == b);
        prop_assert!(a.trans.iter().chain(a.emit.expected.iter()).all(|&x| x > 0.0));
        prop_assert!(rel_close(a.transition_mass(), tokens as f64, 1e-6));
        prop_assert!(rel_close(a.emission_mass(), tokens as f64, 1e-6));
        Ok(())
    })
}

pub fn small_corpus(seed: u64, k: usize, v: usize, n: usize) -> Corpus {
    let spec = SyntheticSpec::random(k, v, 1.0, 0.5, n, 10, 30, seed).unwrap();
    generate_synthetic(&spec).unwrap().0
}

pub fn training_run() -> Result<(), String> {
    let algorithms = prop_oneof![Just(Algorithm::ScviHmm), Just(Algorithm::ScviHdpHmm), Just(Algorithm::SviHmm)];
    run((algorithms, 1usize..6, 0.5f64..=1.0, any::<u64>()), |(algorithm, k, kappa, seed)| {
        let corpus = small_corpus(seed, 3, 8, 500);
        let heldout = corpus.sequences[..20].to_vec();
        let config = TrainConfig {
            algorithm,
            states: k,
            kappa,
            minibatch: 50,
            large_batch: 100,
            passes: 3,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&corpus, &heldout, &config).unwrap();
        let mut records = Vec::new();
        trainer
            .run(|r| {
                records.push(r.clone());
                Ok(())
            })
            .unwrap();
        prop_assert_eq!(records.len(), 4);
        for w in records.windows(2) {
            prop_assert!(w[1].seconds >= w[0].seconds && w[1].step > w[0].step);
        }
        prop_assert!(records.iter().all(|r| r.heldout_ll.is_finite() && r.heldout_ll < 0.0));
        if let scvi::train::Model::Scvi { stats, .. } = trainer.model() {
            let tokens = corpus.token_count() as f64;
            prop_assert!(rel_close(stats.transition_mass(), stats.emission_mass(), 1e-9));
            prop_assert!(rel_close(stats.transition_mass(), tokens, 0.05), "{} vs {tokens}", stats.transition_mass());
        }
        Ok(())
    })
}

pub fn random_inputs(seed: u64, k: usize, t: usize, sequences: usize) -> (TableInputs, Vec<scvi::messages::SequencePosterior>) {
    let mut r = rng(seed);
    let v = 4;
    let params = random_params(&mut r, k, v);
    let mut inputs = TableInputs::zeros(k);
    let mut posts = Vec::new();
    for _ in 0..sequences {
        let seq = random_sequence(&mut r, t, v);
        let post = forward_backward(&params, &seq).unwrap();
        inputs.accumulate(&post);
        posts.push(post);
    }
    (inputs.scaled(1.0 / sequences as f64), posts)
}

pub fn tables_bounded() -> Result<(), String> {
    run((1usize..5, 1usize..9, 1usize..6, 0.0f64..4.0, any::<u64>()), |(k, t, seqs, log_n, seed)| {
        let n = 10f64.powf(log_n).round();
        let (inputs, posts) = random_inputs(seed, k, t, seqs);
        let post = random_hdp(seed ^ 1, k);
        let tables = expected_tables(&inputs, n, &post).unwrap();
        prop_assert!(tables.elog_eta.iter().all(|&e| e <= 0.0));
        for ((r, c), &es) in tables.es.indexed_iter() {
            let customers = n * inputs.counts[[r, c]];
            prop_assert!(es >= 0.0 && es <= customers + 1e-9, "cell ({r},{c}): {es} tables, {customers} customers");
        }
        if seqs == 1 {
            let geo = post.geo_alpha_pi();
            for ((r, c), &es) in tables.es.indexed_iter() {
                let mean = inputs.counts[[r, c]];
                if mean > 0.0 {
                    let log_empty: f64 = posts[0].pairwise.index_axis(Axis(2), c).column(r).iter().map(|p| (1.0 - p).ln()).sum();
                    let q = 1.0 - (n * log_empty).exp();
                    let e_plus = n * mean / q;
                    let g = geo[c];
                    let lower = q * g * (digamma(g + e_plus.min(1.0)).unwrap() - digamma(g).unwrap());
                    prop_assert!(es >= lower - 1e-9, "cell ({r},{c}): {es} < {lower}");
                }
            }
        }
        Ok(())
    })
}

pub fn tables_in_n() -> Result<(), String> {
    run((1usize..5, 1usize..9, any::<u64>()), |(k, t, seed)| {
        let (inputs, _) = random_inputs(seed, k, t, 1);
        let post = random_hdp(seed ^ 1, k);
        let ns: Vec<f64> = (0..=10).map(|i| (1u32 << i) as f64).collect();
        let es: Vec<TableStats> = ns.iter().map(|&n| expected_tables(&inputs, n, &post).unwrap()).collect();
        for (r, c) in (0..=k).flat_map(|r| (0..k).map(move |c| (r, c))) {
            let f: Vec<f64> = es.iter().map(|s| s.es[[r, c]]).collect();
            let slopes: Vec<f64> = (1..ns.len()).map(|i| (f[i] - f[i - 1]) / (ns[i] - ns[i - 1])).collect();
            prop_assert!(slopes.iter().all(|&s| s >= -1e-9), "cell ({r},{c}) decreases: {f:?}");
            for w in slopes.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "cell ({r},{c}) not concave: {f:?}");
            }
        }
        Ok(())
    })
}

pub fn random_tables(seed: u64, k: usize) -> TableStats {
    let mut r = rng(seed);
    TableStats {
        es: Array2::from_shape_simple_fn((k + 1, k), || if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..50.0) }),
        elog_eta: Array1::from_shape_simple_fn(k + 1, || -r.random_range(0.0..10.0)),
    }
}

pub fn hdp_params(p: &HdpPosterior) -> Vec<f64> {
    let mut out: Vec<f64> = p.sticks().iter().flat_map(|s| [s.u(), s.v()]).collect();
    out.extend([p.alpha().shape(), p.alpha().rate(), p.gamma().shape(), p.gamma().rate()]);
    out
}

pub fn hdp_idempotent() -> Result<(), String> {
    run((1usize..12, any::<u64>()), |(k, seed)| {
        let priors = HdpPriors::default();
        let tables = random_tables(seed, k);
        let once = update_hdp(&random_hdp(seed, k), &tables, 1.0, &priors).unwrap();
        let twice = update_hdp(&once, &tables, 1.0, &priors).unwrap();
        for (a, b) in hdp_params(&once).iter().zip(hdp_params(&twice)) {
            prop_assert!(rel_close(*a, b, 1e-12), "{a} vs {b}");
        }
        Ok(())
    })
}

pub fn hdp_cache() -> Result<(), String> {
    run((1usize..12, 1e-3f64..=1.0, any::<u64>()), |(k, rho, seed)| {
        let priors = HdpPriors::default();
        let mut post = HdpPosterior::from_prior(k, &priors).unwrap();
        for step in 0..3 {
            post = update_hdp(&post, &random_tables(seed.wrapping_add(step), k), rho, &priors).unwrap();
            let fresh = post.compute_geo_alpha_pi();
            let oracle = HdpState {
                c: Array2::zeros((k + 1, k)),
                e: Array2::zeros((k, 1)),
                u: post.sticks().iter().map(|s| s.u()).collect(),
                v: post.sticks().iter().map(|s| s.v()).collect(),
                alpha: (post.alpha().shape(), post.alpha().rate()),
                gamma: (post.gamma().shape(), post.gamma().rate()),
                pinned: false,
            }
            .geo_alpha_pi();
            for j in 0..k {
                prop_assert!(rel_close(post.geo_alpha_pi()[j], fresh[j], 1e-12));
                prop_assert!(rel_close(post.geo_alpha_pi()[j], oracle[j], 1e-10));
                prop_assert!(post.geo_alpha_pi()[j] > 0.0);
            }
        }
        Ok(())
    })
}

pub fn svi_above_prior() -> Result<(), String> {
    run((1usize..6, 1usize..8, 0.5f64..=1.0, any::<u64>()), |(k, v, kappa, seed)| {
        let mut r = rng(seed);
        let priors = SviPriors {
            trans: 0.1,
            emit: EmissionPrior::symmetric(v, 0.1).unwrap(),
        };
        let mut rows = DirichletRows::initialize(k, &priors, 200, seed).unwrap();
        let mut sched = Schedule::new(kappa, 5, 5).unwrap();
        let exec = Executor::sequential();
        for _ in 0..5 {
            let batch = random_batch(&mut r, 5, v);
            let refs: Vec<&[u32]> = batch.iter().map(|s| s.as_slice()).collect();
            rows = svi_step(&rows, &refs, 40, &mut sched, &priors, &exec).unwrap();
            prop_assert!(rows.trans_posterior.iter().all(|&x| x >= 0.1 - 1e-12));
            prop_assert!(rows.emit_posterior.iter().all(|&x| x >= 0.1 - 1e-12));
        }
        Ok(())
    })
}

pub fn minibatch_streams() -> Result<(), String> {
    run((1usize..100, 1usize..120, any::<u64>(), any::<bool>()), |(n, m, seed, iid)| {
        let mode = if iid { Sampling::Iid } else { Sampling::Shuffle };
        let mut a = minibatches(n, m, seed, mode).unwrap();
        let b = minibatches(n, m, seed, mode).unwrap();
        let per_pass = a.batches_per_pass();
        let first: Vec<Vec<usize>> = a.by_ref().take(3 * per_pass).collect();
        prop_assert_eq!(&first, &b.take(3 * per_pass).collect::<Vec<_>>());
        for pass in first.chunks(per_pass) {
            if iid {
                prop_assert!(pass.iter().all(|batch| batch.len() == m && batch.iter().all(|&i| i < n)));
            } else {
                let mut seen: Vec<usize> = pass.iter().flatten().copied().collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
        Ok(())
    })
}

pub fn corpus_round_trip() -> Result<(), String> {
    run((1usize..30, 1usize..40, any::<u64>()), |(v, n, seed)| {
        let mut r = rng(seed);
        let words: Vec<String> = std::iter::once(scvi::corpus::UNK.to_string())
            .chain((0..v).map(|i| format!("w{i}_{}", ["a", "β", "日"][i % 3])))
            .collect();
        let vocab = Vocab::from_words(words, true).unwrap();
        let size = vocab.len() as u32;
        let sequences: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let len = r.random_range(1..15);
                (0..len).map(|_| r.random_range(1..size)).collect()
            })
            .collect();
        let corpus = Corpus::new(sequences, vocab.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (cp, vp) = (dir.path().join("c.txt"), dir.path().join("v.txt"));
        corpus.save(&cp).unwrap();
        vocab.save(&vp).unwrap();
        let frozen = VocabPolicy::Frozen {
            vocab: Vocab::load(&vp).unwrap(),
            oov: OovPolicy::Error,
        };
        let (loaded, _) = load_corpus(&cp, &frozen).unwrap();
        prop_assert_eq!(&loaded.sequences, &corpus.sequences);
        prop_assert_eq!(loaded.vocab.words(), corpus.vocab.words());
        Ok(())
    })
}

pub fn split_partition() -> Result<(), String> {
    run((2usize..300, 0.05f64..0.95, any::<u64>()), |(n, fraction, seed)| {
        let corpus = Corpus::new((0..n as u32).map(|i| vec![i]).collect(), Vocab::symbols(n)).unwrap();
        let Ok((train, test)) = split(&corpus, fraction, seed) else {
            // Only an empty side is an acceptable failure.
            let k = (fraction * n as f64).round() as usize;
            prop_assert!(k == 0 || k == n);
            return Ok(());
        };
        let (again, _) = split(&corpus, fraction, seed).unwrap();
        prop_assert_eq!(&train.sequences, &again.sequences);
        let mut all: Vec<u32> = train.sequences.iter().chain(&test.sequences).map(|s| s[0]).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
        Ok(())
    })
}

pub fn synthetic_transitions() -> Result<(), String> {
    run((2usize..5, any::<u64>()), |(k, seed)| {
        let spec = SyntheticSpec::random(k, 5, 2.0, 1.0, 1000, 100, 100, seed).unwrap();
        let counts = transition_counts(&spec);
        let mut chi2 = 0.0;
        let mut df = 0usize;
        for (row, probs) in counts.iter().zip(&spec.trans) {
            let total: f64 = row.iter().sum();
            for (&c, &p) in row.iter().zip(probs) {
                let e = total * p;
                chi2 += (c - e).powi(2) / e;
            }
            df += k - 1;
        }
        let bound = df as f64 + 6.0 * (2.0 * df as f64).sqrt();
        prop_assert!(chi2 < bound, "chi2 {chi2} with {df} dof");
        Ok(())
    })
}

/// Transition counts over 1e5 steps of `spec`'s chain, read off a copy whose
/// one-hot emissions reveal the hidden states.
pub fn transition_counts(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let k = spec.states;
    let mut revealing = spec.clone();
    revealing.vocab_size = k;
    revealing.emit = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let (corpus, _) = generate_synthetic(&revealing).unwrap();
    let mut counts = vec![vec![0.0; k]; k + 1];
    for seq in &corpus.sequences {
        let mut row = 0;
        for &z in seq {
            counts[row][z as usize] += 1.0;
            row = z as usize + 1;
        }
    }
    counts
}

pub fn metrics_round_trip() -> Result<(), String> {
    run((any::<u64>(), 0.0f64..1e3, 0.0f64..1e5, -50.0f64..0.0, 0usize..500), |(step, pass, seconds, ll, keff)| {
        let rec = MetricRecord {
            step,
            pass,
            seconds,
            heldout_ll: ll,
            k_effective: keff,
        };
        let line = rec.to_csv_row();
        prop_assert_eq!(line.split(',').count(), 5);
        let back = MetricRecord::parse_csv_row(&line).unwrap();
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.k_effective, keff);
        prop_assert_eq!(back.heldout_ll.to_bits(), ll.to_bits());
        prop_assert!((back.pass - pass).abs() <= 5e-7 && (back.seconds - seconds).abs() <= 5e-7);
        Ok(())
    })
}

pub fn persistence_round_trip() -> Result<(), String> {
    let algorithms = prop_oneof![Just(Algorithm::ScviHmm), Just(Algorithm::ScviHdpHmm), Just(Algorithm::SviHmm)];
    run((algorithms, 1usize..5, 0usize..4, any::<u64>()), |(algorithm, k, steps, seed)| {
        let corpus = small_corpus(seed, 2, 6, 40);
        let heldout = corpus.sequences[..5].to_vec();
        let config = TrainConfig {
            algorithm,
            states: k,
            minibatch: 10,
            large_batch: 10,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&corpus, &heldout, &config).unwrap();
        for _ in 0..steps {
            trainer.step().unwrap();
        }
        let ck = trainer.into_checkpoint();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        prop_assert!(back == ck);
        let (a, b) = (
            ck.model.predictive_log_likelihood(&heldout).unwrap(),
            back.model.predictive_log_likelihood(&heldout).unwrap(),
        );
        prop_assert_eq!(a.to_bits(), b.to_bits());
        Ok(())
    })
}
