use approx::assert_abs_diff_eq;
use cbir_core::aggregation::{avg_pool, gem_pool, max_pool, pmp_pool, rmac_pool, FeatureMap};
use cbir_core::descriptor::min_eigenvalue;
use cbir_core::eval::{ndcg_at_k, simulate_feedback_session, QuerySpec, SimulationConfig};
use cbir_core::feedback::itml::{itml_pairs, ItmlConfig, ItmlThresholds};
use cbir_core::feedback::KdeScorer;
use cbir_core::feedback::Method;
use cbir_core::{knn_query, l2_normalize, CorpusIndex, Descriptor, IndexEntry, LearnedMetric};
use proptest::collection::vec;
use proptest::prelude::*;

fn feature_map() -> impl Strategy<Value = FeatureMap> {
    (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| {
        vec(0.0f32..4.0, h * w * c).prop_map(move |data| FeatureMap::new(h, w, c, data).unwrap())
    })
}

fn corpus(dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    vec(vec(-1.0f32..1.0, dim), 1..25)
        .prop_filter("nonzero rows", |rows| rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-3)))
}

fn build(rows: &[Vec<f32>]) -> CorpusIndex {
    let entries = rows.iter().enumerate().map(|(i, r)| IndexEntry::new(format!("i{i:03}"), r.clone())).collect();
    CorpusIndex::build(entries).unwrap()
}

fn direct_ndcg(y: &[bool], total: usize, k: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut dcg = 0.0;
    for i in 1..=k {
        if y[i - 1] {
            dcg += 1.0 / ((i + 1) as f64).log2();
        }
    }
    let mut ideal = 0.0;
    for i in 1..=k.min(total) {
        ideal += 1.0 / ((i + 1) as f64).log2();
    }
    dcg / ideal
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_descriptors_have_unit_norm(v in vec(-10.0f64..10.0, 1..40)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
        let d = l2_normalize(&v).unwrap();
        prop_assert!((d.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn knn_is_sorted_sized_and_deterministic(rows in corpus(4), q in vec(-1.0f32..1.0, 4), k in 1usize..30) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let index = build(&rows);
        let query = Descriptor::from_f32(&q).unwrap();
        let a = knn_query(&index, &query, k, None).unwrap();
        prop_assert_eq!(a.len(), k.min(index.len()));
        for w in a.windows(2) {
            prop_assert!(w[0].distance < w[1].distance || (w[0].distance == w[1].distance && w[0].id < w[1].id));
        }
        prop_assert_eq!(a, knn_query(&index, &query, k, None).unwrap());
    }

    #[test]
    fn identity_metric_matches_squared_euclidean(a in vec(-1.0f32..1.0, 6), b in vec(-1.0f32..1.0, 6)) {
        let d = LearnedMetric::identity(6).distance(&a, &b).unwrap();
        let e: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
        prop_assert!((d - e).abs() < 1e-9);
    }

    #[test]
    fn pooling_identities(fm in feature_map()) {
        prop_assume!(fm.data().iter().any(|&v| v > 1e-3));
        let avg = avg_pool(&fm).unwrap();
        let max = max_pool(&fm).unwrap();
        for (x, y) in gem_pool(&fm, 1.0).unwrap().as_slice().iter().zip(avg.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
        for (x, y) in pmp_pool(&fm, 1.0).unwrap().as_slice().iter().zip(avg.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
        let one = 0.5 / fm.positions() as f64;
        for (x, y) in pmp_pool(&fm, one).unwrap().as_slice().iter().zip(max.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn square_single_scale_rmac_is_max(side in 1usize..7, c in 1usize..5, seed in vec(0.0f32..3.0, 6 * 6 * 4)) {
        let data = seed[..side * side * c].to_vec();
        prop_assume!(data.iter().any(|&v| v > 1e-3));
        let fm = FeatureMap::new(side, side, c, data).unwrap();
        let r = rmac_pool(&fm, 1).unwrap();
        let m = max_pool(&fm).unwrap();
        for (x, y) in r.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn ndcg_matches_definition(y in vec(any::<bool>(), 1..200), extra in 0usize..20, k_seed in any::<u16>()) {
        let k = 1 + k_seed as usize % y.len().min(100);
        let total = y.iter().filter(|&&r| r).count() + extra;
        let got = ndcg_at_k(&y, total, k).unwrap();
        prop_assert!((got - direct_ndcg(&y, total, k)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn moving_a_relevant_item_up_never_hurts(y in vec(any::<bool>(), 2..60), i_seed in any::<u16>()) {
        let n = y.len();
        let i = 1 + i_seed as usize % (n - 1);
        prop_assume!(y[i] && !y[i - 1]);
        let total = y.iter().filter(|&&r| r).count();
        let mut z = y.clone();
        z.swap(i, i - 1);
        prop_assert!(ndcg_at_k(&z, total, n).unwrap() >= ndcg_at_k(&y, total, n).unwrap());
    }

    #[test]
    fn ndcg_is_one_exactly_for_a_relevant_prefix(y in vec(any::<bool>(), 1..40), extra in 0usize..5) {
        let n = y.len();
        let total = y.iter().filter(|&&r| r).count() + extra;
        let prefix = n.min(total);
        let ideal = y[..prefix].iter().all(|&r| r);
        prop_assert_eq!(ndcg_at_k(&y, total, n).unwrap() == 1.0, ideal && total > 0);
    }

    #[test]
    fn kde_scores_are_probabilities_and_order_free(
        pos in vec(vec(-1.0f32..1.0, 3), 1..5),
        neg in vec(vec(-1.0f32..1.0, 3), 0..5),
        x in vec(-2.0f32..2.0, 3),
    ) {
        let p: Vec<&[f32]> = pos.iter().map(|v| v.as_slice()).collect();
        let n: Vec<&[f32]> = neg.iter().map(|v| v.as_slice()).collect();
        let a = KdeScorer::fit(&p, &n, None, 0.5).unwrap().score(&x);
        let pr: Vec<&[f32]> = p.iter().rev().copied().collect();
        let nr: Vec<&[f32]> = n.iter().rev().copied().collect();
        let b = KdeScorer::fit(&pr, &nr, None, 0.5).unwrap().score(&x);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
    }
}

/// Random feasible instance: positives vary only inside a random subspace,
/// negatives are offset along its orthogonal complement.
fn feasible_instance(seed: u64) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..=8);
    let free = rng.gen_range(1..dim);
    let np = rng.gen_range(1..=5);
    let nn = rng.gen_range(1..=5);
    let pos = (0..np)
        .map(|_| (0..dim).map(|d| if d < free { rng.gen_range(-0.5..0.5) } else { 0.0 }).collect())
        .collect();
    let neg = (0..nn)
        .map(|_| {
            (0..dim)
                .map(|d| {
                    if d < free {
                        rng.gen_range(-0.5..0.5)
                    } else {
                        let s: f32 = rng.gen_range(0.2..0.8);
                        if rng.gen_bool(0.5) { s } else { -s }
                    }
                })
                .collect()
        })
        .collect();
    (pos, neg)
}

#[test]
fn itml_satisfies_feasible_constraints() {
    for seed in 0..30 {
        let (pos, neg) = feasible_instance(seed);
        let p: Vec<&[f32]> = pos.iter().map(|v| v.as_slice()).collect();
        let n: Vec<&[f32]> = neg.iter().map(|v| v.as_slice()).collect();
        let th = ItmlThresholds::new(0.05, 1.0);
        let fit = itml_pairs(&p, &n, th, &ItmlConfig::default()).unwrap();
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                assert!(fit.metric.distance(p[i], p[j]).unwrap() <= th.upper + 1e-3, "seed {seed}");
            }
            for x in &n {
                assert!(fit.metric.distance(x, p[i]).unwrap() >= th.lower - 1e-3, "seed {seed}");
            }
        }
        assert!(min_eigenvalue(&fit.metric.to_matrix()) >= -1e-8);
    }
}

#[test]
fn trajectories_are_well_formed() {
    let corpus = cbir_core::synthetic::generate(&cbir_core::synthetic::SyntheticConfig {
        items: 300,
        dim: 12,
        signal_dims: 3,
        relevant_fraction: 0.1,
        ..Default::default()
    })
    .unwrap();
    let index = corpus.index().unwrap();
    let cfg = SimulationConfig { rounds: 4, marks_per_round: 5, pool_depth: 30, eval_k: 30, ..Default::default() };
    for method in Method::all() {
        let q: QuerySpec = corpus.queries(1).remove(0);
        let tr = simulate_feedback_session(&index, &q, method, &cfg).unwrap();
        assert_eq!(tr.ndcg.len(), cfg.rounds + 1, "{method}");
        assert!(tr.ndcg.iter().all(|v| (0.0..=1.0).contains(v)), "{method}");
        assert_abs_diff_eq!(tr.ndcg[0], simulate_feedback_session(&index, &q, method, &cfg).unwrap().ndcg[0]);
    }
}
