mod common;

use common::{random_cost, rng};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use uft::measures::{FeatureSet, MassVector};
use uft::metrics::*;
use uft::oracle::brute_force_assignment;
use uft::sinkhorn::{solve_balanced, SolverOptions};

fn random_features(r: &mut impl Rng, n: usize, d: usize) -> FeatureSet {
    FeatureSet::new(Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))).unwrap()
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

#[test]
fn consistency_loss_matches_naive_mean() {
    let mut r = rng(107);
    let a = random_features(&mut r, 7, 5);
    let b = random_features(&mut r, 7, 5);
    let mut sum = 0.0;
    for i in 0..7 {
        for c in 0..5 {
            sum += (a.as_array()[[i, c]] - b.as_array()[[i, c]]).abs();
        }
    }
    let got = feature_consistency_loss(&a, &b).unwrap();
    assert!((got - sum / 35.0).abs() < 1e-14);
    assert_eq!(perceptual_distance(&a, &b).unwrap(), got);
}

#[test]
fn contextual_loss_prefers_matching_context() {
    let mut r = rng(109);
    let y = random_features(&mut r, 12, 8);
    let mut rows: Vec<usize> = (0..12).collect();
    rows.reverse();
    let permuted = FeatureSet::new(y.as_array().select(ndarray::Axis(0), &rows)).unwrap();
    let unrelated = random_features(&mut r, 12, 8);
    let own = contextual_loss(&y, &y, CX_BANDWIDTH).unwrap();
    let shuffled = contextual_loss(&permuted, &y, CX_BANDWIDTH).unwrap();
    let other = contextual_loss(&unrelated, &y, CX_BANDWIDTH).unwrap();
    assert!((own - shuffled).abs() < 1e-12);
    assert!(own < other);
    let cx = contextual_similarity(&unrelated, &y, CX_BANDWIDTH).unwrap();
    for row in cx.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cosine_matching_agrees_with_double_loop() {
    let mut r = rng(113);
    for _ in 0..20 {
        let x = random_features(&mut r, 9, 4);
        let z = random_features(&mut r, 11, 4);
        let want: Vec<usize> = (0..9)
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..11 {
                    let s = cosine(x.row(i), z.row(j));
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                best.0
            })
            .collect();
        assert_eq!(argmax_match_cosine(&x, &z).unwrap(), want);
    }
}

#[test]
fn plan_matching_recovers_assignment() {
    let mut r = rng(127);
    let uniform = MassVector::uniform(6, 1.0).unwrap();
    let mut hits = 0;
    for _ in 0..20 {
        let cost = random_cost(&mut r, 6, 6);
        let oracle = brute_force_assignment(&cost).unwrap();
        let sol = solve_balanced(&cost, &uniform, &uniform, &SolverOptions::default().with_eta(1e-3)).unwrap();
        hits += usize::from(argmax_match_plan(sol.plan.view()).unwrap() == oracle.permutation);
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn report_counts_leakage_and_accuracy() {
    let plan = ndarray::array![[0.6, 0.2, 0.2], [0.0, 0.5, 0.5]];
    let report = matching_report(&[0, 0], &[1, 2], &[1, 2, 0], plan.view(), &[false, false, true]).unwrap();
    assert_eq!(report.many_to_one_rate, 0.5);
    assert!((report.outlier_leakage - 0.7 / 2.0).abs() < 1e-15);
    assert_eq!(report.accuracy, 0.5);
    assert!(argmax_match_plan(ndarray::array![[0.0, 0.0]].view()).is_err());
    assert!(argmax_match_plan(ndarray::array![[0.5, -0.1]].view()).is_err());
    assert_eq!(weighted_objective(&[(1.0, 2.0), (0.5, 4.0)]).unwrap(), 4.0);
}

proptest! {
    #[test]
    fn many_to_one_rate_counts_repeats(matching in proptest::collection::vec(0usize..6, 1..20)) {
        let rate = many_to_one_rate(&matching).unwrap();
        let mut distinct = matching.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(rate, (matching.len() - distinct.len()) as f64 / matching.len() as f64);
        prop_assert!((0.0..1.0).contains(&rate));
    }

    #[test]
    fn leakage_is_a_fraction(n in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = Array2::from_shape_fn((n, m), |_| r.random_range(0.0..1.0));
        let mask: Vec<bool> = (0..m).map(|_| r.random_bool(0.5)).collect();
        let leak = outlier_leakage(plan.view(), &mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&leak));
        let none = outlier_leakage(plan.view(), &vec![false; m]).unwrap();
        prop_assert_eq!(none, 0.0);
    }
}
