mod common;

use common::{auc_pairwise, ece_by_position, logloss_direct, pcoc_direct};
use hdr_core::metrics::{auc, ece, ece_buckets, evaluate, logloss, pcoc, LOGLOSS_EPS};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Random predictions with a configurable number of distinct values, so that
/// heavy ties show up often.
fn random_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..300);
    let distinct = rng.random_range(1..=n);
    let levels: Vec<f64> = (0..distinct).map(|_| rng.random::<f64>()).collect();
    let rate = rng.random_range(0.05..0.95);
    let mut preds: Vec<f64> = (0..n).map(|_| levels[rng.random_range(0..distinct)]).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(rate)).collect();
    labels[0] = true;
    labels[1] = false;
    if rng.random_bool(0.05) {
        preds[0] = 0.0;
        preds[1] = 1.0;
    }
    (preds, labels)
}

#[test]
fn matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let (p, y) = random_set(&mut rng);
        let k = rng.random_range(1..=p.len());
        assert!(close(auc(&p, &y).unwrap(), auc_pairwise(&p, &y), 1e-10));
        assert!(close(logloss(&p, &y).unwrap(), logloss_direct(&p, &y, LOGLOSS_EPS), 1e-10));
        assert!(close(pcoc(&p, &y).unwrap(), pcoc_direct(&p, &y), 1e-10));
        assert!(close(ece(&p, &y, k).unwrap(), ece_by_position(&p, &y, k), 1e-10));
    }
}

#[test]
fn all_ties_give_half_auc() {
    let p = vec![0.3; 50];
    let y: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
    assert_eq!(auc(&p, &y).unwrap(), 0.5);
    assert_eq!(auc_pairwise(&p, &y), 0.5);
}

#[test]
fn single_bucket_ece_is_global_gap() {
    let p = vec![0.1, 0.4, 0.2, 0.9];
    let y = vec![false, true, false, true];
    let gap = (2.0 - 1.6_f64).abs() / 4.0;
    assert!(close(ece(&p, &y, 1).unwrap(), gap, 1e-15));
}

#[test]
fn one_sample_per_bucket_ece_is_mean_abs_error() {
    let p = vec![0.1, 0.4, 0.2, 0.9];
    let y = vec![false, true, false, true];
    let mae = (0.1 + 0.6 + 0.2 + 0.1) / 4.0;
    assert!(close(ece(&p, &y, 4).unwrap(), mae, 1e-15));
}

#[test]
fn bucket_sizes_put_remainder_first() {
    let p: Vec<f64> = (0..23).map(|i| i as f64 / 23.0).collect();
    let y: Vec<bool> = (0..23).map(|i| i % 2 == 0).collect();
    let sizes: Vec<usize> = ece_buckets(&p, &y, 5).unwrap().iter().map(|b| b.count).collect();
    assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(auc(&[0.2, 0.4], &[true, true]).is_err());
    assert!(pcoc(&[0.2, 0.4], &[false, false]).is_err());
    assert!(logloss(&[], &[]).is_err());
    assert!(ece(&[0.2, 1.2], &[true, false], 1).is_err());
    assert!(ece(&[0.2, 0.4], &[true, false], 3).is_err());
    assert!(auc(&[0.2], &[true, false]).is_err());
}

#[test]
fn logloss_clamps_certain_mistakes() {
    let ll = logloss(&[0.0, 1.0], &[true, false]).unwrap();
    let upper = 1.0 - LOGLOSS_EPS;
    let expected = -(LOGLOSS_EPS.ln() + (1.0 - upper).ln()) / 2.0;
    assert!(close(ll, expected, 1e-12));
    assert!(ll.is_finite() && ll > 27.0);
}

#[test]
fn evaluate_caps_bucket_count() {
    let r = evaluate(&[0.1, 0.8, 0.4], &[false, true, true], 100).unwrap();
    assert_eq!(r.k, 3);
    assert_eq!(r.buckets.len(), 3);
}

fn eval_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (3usize..80).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(any::<bool>(), n)).prop_map(|(p, mut y)| {
            y[0] = true;
            y[1] = false;
            (p, y)
        })
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_to_monotone_maps((p, y) in eval_set()) {
        let mapped: Vec<f64> = p.iter().map(|v| v * v * v).collect();
        let a = auc(&p, &y).unwrap();
        prop_assert!(close(a, auc(&mapped, &y).unwrap(), 1e-12));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn reversing_scores_reflects_auc((p, y) in eval_set()) {
        let flipped: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let a = auc(&p, &y).unwrap();
        let b = auc(&flipped, &y).unwrap();
        prop_assert!(close(a + b, 1.0, 1e-12));
    }

    #[test]
    fn metrics_ignore_sample_order((p, y) in eval_set(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let q: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let z: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        prop_assert!(close(auc(&p, &y).unwrap(), auc(&q, &z).unwrap(), 1e-12));
        prop_assert!(close(logloss(&p, &y).unwrap(), logloss(&q, &z).unwrap(), 1e-12));
        prop_assert!(close(pcoc(&p, &y).unwrap(), pcoc(&q, &z).unwrap(), 1e-12));
    }

    #[test]
    fn ece_is_bounded((p, y) in eval_set(), k in 1usize..4) {
        let e = ece(&p, &y, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let n = p.len() as f64;
        let global = (y.iter().filter(|&&v| v).count() as f64 - p.iter().sum::<f64>()).abs() / n;
        prop_assert!(e + 1e-12 >= global);
    }
}
