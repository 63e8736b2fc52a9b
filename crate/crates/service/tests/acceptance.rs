//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use cbir_core::aggregation::{avg_pool, gem_pool, max_pool, pmp_count, pmp_pool, rmac_pool, FeatureMap};
use cbir_core::descriptor::min_eigenvalue;
use cbir_core::eval::{ndcg_at_k, paired_t_test, run_benchmark, SimulationConfig};
use cbir_core::feedback::itml::{itml_pairs, ItmlConfig, ItmlThresholds};
use cbir_core::feedback::{fit_scorer, FeedbackConfig, FeedbackContext, Method};
use cbir_core::io::{encode_descriptors, DescriptorBlock};
use cbir_core::synthetic::{generate, SyntheticConfig};
use cbir_service::dataset::{Dataset, DatasetManifest};
use cbir_service::session::{Mark, QueryInput, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Direct evaluation of DCG over the top k against the ideal ordering.
fn direct_ndcg(y: &[bool], total: usize, k: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let gain = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = (1..=k).filter(|&i| y[i - 1]).map(gain).sum();
    let ideal: f64 = (1..=k.min(total)).map(gain).sum();
    dcg / ideal
}

fn ndcg_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let k = rng.gen_range(1..=n.min(100));
        let density: f64 = rng.gen_range(0.0..1.0);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(density)).collect();
        let total = y.iter().filter(|&&r| r).count() + rng.gen_range(0..5);
        let got = ndcg_at_k(&y, total, k).map_err(|e| e.to_string())?;
        worst = worst.max((got - direct_ndcg(&y, total, k)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    let perfect = [true, true, true, false, false];
    ensure(ndcg_at_k(&perfect, 3, 5).unwrap() == 1.0, || "perfect ranking is not 1".into())?;
    ensure(ndcg_at_k(&[false; 10], 0, 10).unwrap() == 0.0, || "empty relevance is not 0".into())?;
    Ok(format!("1000 rankings, max deviation {worst:.1e}"))
}

fn pooling_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut diff = |a: &[f32], b: &[f32]| {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() as f64);
        }
    };
    for _ in 0..100 {
        let side = rng.gen_range(1..=9);
        let c = rng.gen_range(1..=16);
        let data: Vec<f32> = (0..side * side * c).map(|_| rng.gen_range(0.0f32..5.0)).collect();
        let fm = FeatureMap::new(side, side, c, data).map_err(|e| e.to_string())?;
        let avg = avg_pool(&fm).map_err(|e| e.to_string())?;
        let max = max_pool(&fm).map_err(|e| e.to_string())?;
        // Independent max: per-channel maximum, then unit norm.
        let mut raw = vec![f64::MIN; c];
        for (i, &v) in fm.data().iter().enumerate() {
            raw[i % c] = raw[i % c].max(v as f64);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let oracle_max: Vec<f32> = raw.iter().map(|v| (v / norm) as f32).collect();
        diff(max.as_slice(), &oracle_max);
        diff(gem_pool(&fm, 1.0).unwrap().as_slice(), avg.as_slice());
        let one = 0.5 / fm.positions() as f64;
        ensure(pmp_count(fm.positions(), one) == 1, || "pmp ratio does not select one position".into())?;
        diff(pmp_pool(&fm, one).unwrap().as_slice(), max.as_slice());
        diff(pmp_pool(&fm, 1.0).unwrap().as_slice(), avg.as_slice());
        diff(rmac_pool(&fm, 1).unwrap().as_slice(), &oracle_max);
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 maps, max deviation {worst:.1e}"))
}

fn feasible_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let dim = rng.gen_range(2..=8);
    let free = rng.gen_range(1..dim);
    let np = rng.gen_range(2..=5);
    let nn = rng.gen_range(1..=5);
    let mut point = |neg: bool| -> Vec<f32> {
        (0..dim)
            .map(|d| {
                if d < free {
                    rng.gen_range(-0.5..0.5)
                } else if neg {
                    let s: f32 = rng.gen_range(0.2..0.8);
                    if rng.gen_bool(0.5) { s } else { -s }
                } else {
                    0.0
                }
            })
            .collect()
    };
    let pos = (0..np).map(|_| point(false)).collect();
    let neg = (0..nn).map(|_| point(true)).collect();
    (pos, neg)
}

fn itml_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let th = ItmlThresholds::new(0.05, 1.0);
    let cfg = ItmlConfig::default();
    let mut min_eig = f64::INFINITY;
    for case in 0..50 {
        let (pos, neg) = feasible_instance(&mut rng);
        let p: Vec<&[f32]> = pos.iter().map(|v| v.as_slice()).collect();
        let n: Vec<&[f32]> = neg.iter().map(|v| v.as_slice()).collect();
        let fit = itml_pairs(&p, &n, th, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d = fit.metric.distance(p[i], p[j]).unwrap();
                ensure(d <= th.upper + 1e-3, || format!("case {case}: similar pair at {d}"))?;
            }
            for x in &n {
                let d = fit.metric.distance(x, p[i]).unwrap();
                ensure(d >= th.lower - 1e-3, || format!("case {case}: dissimilar pair at {d}"))?;
            }
        }
        min_eig = min_eig.min(min_eigenvalue(&fit.metric.to_matrix()));
    }
    ensure(min_eig >= -1e-8, || format!("min eigenvalue {min_eig:e}"))?;

    // Empty feedback: no constraints on the solver, no marks in a session.
    let q = [0.3f32, -0.1, 0.7];
    let fit = itml_pairs(&[&q], &[], th, &cfg).map_err(|e| e.to_string())?;
    let m = fit.metric.to_matrix();
    ensure(is_exact_identity(&m), || format!("solver without constraints returned {m}"))?;
    let corpus = generate(&SyntheticConfig { items: 200, dim: 6, signal_dims: 2, ..Default::default() }).unwrap();
    let index = corpus.index().unwrap();
    let fc = FeedbackConfig::default();
    let ctx = FeedbackContext::for_item(&index, 0, &fc).unwrap();
    let scorer = fit_scorer(&ctx, &[], &[], Method::ITML).map_err(|e| e.to_string())?;
    let metric = scorer.metric().ok_or("ITML scorer has no metric")?;
    let m = metric.to_matrix();
    ensure(m.nrows() == 6 && is_exact_identity(&m), || format!("empty feedback returned {m}"))?;
    Ok(format!("50 instances, min eigenvalue {min_eig:.1e}, empty feedback identity"))
}

fn is_exact_identity(m: &cbir_core::descriptor::Matrix) -> bool {
    m.nrows() == m.ncols() && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == if i == j { 1.0 } else { 0.0 }))
}

fn trend() -> Check {
    let corpus = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let index = corpus.index().map_err(|e| e.to_string())?;
    let queries = corpus.queries(20);
    let cfg = SimulationConfig { repetitions: 1, subsample_fraction: 1.0, ..Default::default() };
    let methods = [Method::ITML, Method::KDE, Method::SVM];
    let report = run_benchmark(&index, &queries, &methods, &cfg).map_err(|e| e.to_string())?;
    let curve = |m: Method| report.curve(m).map(|c| c.mean.clone()).ok_or(format!("no curve for {m}"));
    let (itml, kde, svm) = (curve(Method::ITML)?, curve(Method::KDE)?, curve(Method::SVM)?);
    let summary = format!(
        "itml r0 {:.3} r5 {:.3} r10 {:.3}; kde r0 {:.3} r5 {:.3}; svm r1 {:.3} vs itml r1 {:.3}; {} fit errors",
        itml[0], itml[5], itml[10], kde[0], kde[5], svm[1], itml[1], report.errors.len()
    );
    ensure(itml[5] - itml[0] >= 0.15, || format!("ITML gain too small: {summary}"))?;
    ensure(itml[10] >= itml[5] - 0.02, || format!("ITML regresses after round 5: {summary}"))?;
    ensure(kde[5] - kde[0] >= 0.10, || format!("KDE gain too small: {summary}"))?;
    ensure(svm[1] <= itml[1], || format!("SVM ahead of ITML in round 1: {summary}"))?;
    Ok(summary)
}

fn determinism() -> Check {
    let corpus = generate(&SyntheticConfig { items: 1500, dim: 32, ..Default::default() }).map_err(|e| e.to_string())?;
    let index = corpus.index().map_err(|e| e.to_string())?;
    let queries = corpus.queries(4);
    let cfg = SimulationConfig { rounds: 3, repetitions: 3, rng_seed: 11, ..Default::default() };
    let methods = [Method::KDE, Method::ITML, Method::SVM, Method::EXEMPLAR_LDA, "mmc-diag+kde".parse().unwrap()];
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| run_benchmark(&index, &queries, &methods, &cfg)).map(|r| r.to_csv()).map_err(|e| e.to_string())
    };
    let a = run(4)?;
    let b = run(4)?;
    let c = run(1)?;
    ensure(a == b, || "two parallel runs differ".into())?;
    ensure(a == c, || "parallel and sequential runs differ".into())?;
    Ok(format!("{} CSV bytes identical over 4-thread, 4-thread and 1-thread runs", a.len()))
}

fn t_test_oracle() -> Check {
    let b = [0.2, 0.4, 0.1, 0.5, 0.3];
    let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + (i + 1) as f64).collect();
    let t = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
    ensure((t.t - 4.2426).abs() < 1e-3, || format!("t = {}", t.t))?;
    ensure((t.p - 0.0132).abs() < 1e-3, || format!("p = {}", t.p))?;
    let reference = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(t.t));
    ensure((t.p - reference).abs() < 1e-9, || format!("p = {} but reference {}", t.p, reference))?;
    Ok(format!("t {:.4}, p {:.4}, dof {}", t.t, t.p, t.dof))
}

fn session_replay() -> Check {
    let corpus = generate(&SyntheticConfig { items: 800, dim: 16, signal_dims: 4, ..Default::default() }).unwrap();
    let data: Vec<f32> = corpus.entries.iter().flat_map(|e| e.descriptor.clone()).collect();
    let desc = encode_descriptors(&DescriptorBlock::new(16, data).unwrap());
    let meta: String = corpus
        .entries
        .iter()
        .map(|e| serde_json::json!({"id": e.id, "image_uri": e.image_uri, "labels": e.labels}).to_string() + "\n")
        .collect();
    let manifest =
        DatasetManifest { name: "replay".into(), descriptor_file: "-".into(), metadata_file: "-".into(), dim: 16, count: 800 };
    let ds = Arc::new(Dataset::from_bytes(&manifest, &desc, meta.as_bytes()).map_err(|e| e.to_string())?);
    let query = QueryInput::Item { query_id: corpus.relevant[0].clone() };
    let mut s = Session::new("s1", ds.clone(), query, Method::ITML, FeedbackConfig::default()).map_err(|e| e.to_string())?;
    let methods = [None, None, Some(Method::KDE), None, Some("itml+kde".parse().unwrap()), Some(Method::SVM)];
    for method in methods {
        let marks: Vec<Mark> = s
            .ranking_ids()
            .iter()
            .filter(|id| !s.state().is_marked(id))
            .take(5)
            .map(|id| Mark { id: id.to_string(), relevant: corpus.relevant.iter().any(|r| r == id) })
            .collect();
        s.submit_feedback(&marks, method).map_err(|e| e.to_string())?;
    }
    let snapshot: cbir_service::SessionSnapshot =
        serde_json::from_str(&serde_json::to_string(&s.snapshot()).unwrap()).map_err(|e| e.to_string())?;
    let replayed = Session::replay(&snapshot, ds).map_err(|e| e.to_string())?;
    ensure(replayed.ranking_ids() == s.ranking_ids(), || "replayed ranking differs".into())?;
    ensure(replayed.history() == s.history(), || "replayed history differs".into())?;
    Ok(format!("{} rounds replayed, {} items identical", s.round(), s.ranking_ids().len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 7] = [
        ("ndcg-oracle", ndcg_oracle, Duration::from_secs(5)),
        ("pooling-identities", pooling_identities, Duration::from_secs(10)),
        ("itml-soundness", itml_soundness, Duration::from_secs(30)),
        ("trend", trend, Duration::from_secs(300)),
        ("determinism", determinism, Duration::from_secs(300)),
        ("t-test-oracle", t_test_oracle, Duration::from_secs(5)),
        ("session-replay", session_replay, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
