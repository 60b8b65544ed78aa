use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:03}")).collect()
}

#[test]
fn identical_and_reversed_rankings() {
    let a = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
    let rev: Vec<f64> = a.iter().map(|x| -x).collect();
    assert_eq!(spearman(&a, &a).unwrap().rho, 1.0);
    assert_eq!(spearman(&a, &rev).unwrap().rho, -1.0);
}

#[test]
fn hand_computed_three_point_rho() {
    let s = spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
    assert!((s.rho - 0.5).abs() < 1e-15);
    assert_eq!(s.method, PValueMethod::ExactPermutation);
}

#[test]
fn exact_permutation_p_value_matches_enumeration() {
    // Enumerated over all 5040 orderings: 172 reach |rho| >= 23/28.
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let y = [2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0];
    let s = spearman(&x, &y).unwrap();
    assert!((s.rho - 23.0 / 28.0).abs() < 1e-12);
    assert!((s.p_value - 172.0 / 5040.0).abs() < 1e-12);

    let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((s.p_value - 2.0 / 24.0).abs() < 1e-12);
}

#[test]
fn t_approximation_matches_reference_value() {
    let x: Vec<f64> = (0..30).map(|i| (i as f64 * 1.7).sin() + 0.1 * i as f64).collect();
    let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.9).cos() + 0.05 * i as f64).collect();
    let s = spearman(&x, &y).unwrap();
    assert_eq!(s.method, PValueMethod::TApproximation);
    assert!((s.rho - 0.426_028_921_023_359_26).abs() < 1e-12);
    assert!((s.p_value - 0.018_904_240_117_944_063).abs() < 1e-9);
}

#[test]
fn ties_get_fractional_ranks() {
    assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    assert_eq!(ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
}

#[test]
fn constant_input_is_degenerate() {
    let s = spearman(&[1.0, 1.0, 1.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(s.degenerate());
    assert_eq!((s.rho, s.p_value), (0.0, 1.0));
}

#[test]
fn spearman_input_errors() {
    assert!(matches!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    assert!(matches!(spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]), Err(Error::NonFinite { .. })));
}

#[test]
fn pairing_by_id_reports_unmatched_ids() {
    let a = vec![("x".to_string(), 1.0), ("y".to_string(), 2.0)];
    let b = vec![("y".to_string(), 5.0), ("z".to_string(), 1.0)];
    let err = pair_by_id(&a, &b).unwrap_err().to_string();
    assert!(err.contains('x') && err.contains('z'), "{err}");

    let b = vec![("y".to_string(), 5.0), ("x".to_string(), 1.0)];
    let (ids, va, vb) = pair_by_id(&a, &b).unwrap();
    assert_eq!(ids, ["x", "y"]);
    assert_eq!((va, vb), (vec![1.0, 2.0], vec![1.0, 5.0]));
}

#[test]
fn overlap_of_identical_and_reversed_scores() {
    let id = ids(8);
    let a: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let rev: Vec<f64> = a.iter().map(|x| -x).collect();
    for k in [0.1, 0.25, 0.5, 1.0] {
        assert_eq!(topk_overlap(&id, &a, &a, k).unwrap(), 1.0);
    }
    assert_eq!(topk_overlap(&id, &a, &rev, 0.5).unwrap(), 0.0);
}

#[test]
fn overlap_matches_set_intersection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let id = ids(10);
        let a: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
        let top = |s: &[f64]| -> BTreeSet<usize> {
            let mut v: Vec<(f64, usize)> = s.iter().copied().zip(0..).collect();
            v.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
            v.iter().take(3).map(|p| p.1).collect()
        };
        let expect = top(&a).intersection(&top(&b)).count() as f64 / 3.0;
        assert_eq!(topk_overlap(&id, &a, &b, 0.3).unwrap(), expect);
    }
}

#[test]
fn top_k_breaks_ties_by_id() {
    let id = vec!["b".to_string(), "a".to_string(), "c".to_string()];
    assert_eq!(top_k(&id, &[1.0, 1.0, 0.0], 1), vec![1]);
    assert_eq!(bottom_k(&id, &[1.0, 0.0, 0.0], 1), vec![1]);
}

#[test]
fn bins_of_constant_low_scores() {
    let id = ids(5);
    let bins = bin_scores(&id, &[0.4; 5], &DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(bins.counts(), vec![5, 0, 0, 0, 0]);
    assert!(bins.top().is_none());
}

#[test]
fn bin_boundaries() {
    let id = vec!["lo".to_string(), "hi".to_string()];
    let bins = bin_scores(&id, &[0.5, 0.51], &DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(bins.bins[0].ids, ["lo"]);
    assert_eq!(bins.bins[1].ids, ["hi"]);
    assert_eq!(bins.counts(), vec![1, 1, 0, 0, 0]);
}

#[test]
fn bin_counts_match_predicate_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let id = ids(500);
    let s: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
    let bins = bin_scores(&id, &s, &DEFAULT_THRESHOLDS).unwrap();
    let mut expect = vec![s.iter().filter(|&&x| x <= 0.5).count()];
    expect.extend(DEFAULT_THRESHOLDS.iter().map(|&t| s.iter().filter(|&&x| x > t).count()));
    assert_eq!(bins.counts(), expect);
    for w in bins.bins[1..].windows(2) {
        assert!(w[1].ids.iter().all(|x| w[0].ids.contains(x)));
    }
    let other: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
    let matched = count_matched(&bins, &id, &other).unwrap();
    assert_eq!(matched.counts(), bins.counts());
}

#[test]
fn bin_errors() {
    assert!(bin_scores(&[], &[], &DEFAULT_THRESHOLDS).is_err());
    assert!(bin_scores(&ids(1), &[0.1], &[0.8, 0.5]).is_err());
}

#[test]
fn sign_test_tail() {
    assert!((binomial_sign_test(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
    let brute: f64 = (7..=10).map(|k| (0..k).fold(1.0, |c, i| c * (10 - i) as f64 / (i + 1) as f64)).sum::<f64>() / 1024.0;
    assert!((binomial_sign_test(7, 10) - brute).abs() < 1e-12);
    assert_eq!(binomial_sign_test(0, 10), 1.0);
}

#[test]
fn report_of_a_column_against_itself() {
    let id = ids(20);
    let a: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    let r = rank_report("icp", "icp", &id, &a, &a, &DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(r.spearman.rho, 1.0);
    assert!(r.overlap.iter().all(|&(_, o)| o == 1.0));
    assert!(r.overlap.windows(2).all(|w| w[0].0 < w[1].0));
    assert!(r.bin_overlap().iter().all(|(_, n, f)| *n == 0 || *f == Some(1.0)));
    assert!(r.overlap_csv().starts_with("percentile,overlap\n"));
    assert!(r.summary().contains("t-approximation"));
    assert!(r.scatter_svg().matches("<circle").count() == 20);
}

fn distinct(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().enumerate().map(|(i, x)| x + i as f64 * 1e-3).collect()
}

proptest! {
    #[test]
    fn rho_invariant_under_increasing_transforms(a in prop::collection::vec(-5.0f64..5.0, 3..30), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = spearman(&a, &b).unwrap();
        let t: Vec<f64> = a.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        let moved = spearman(&t, &b).unwrap();
        prop_assert!((base.rho - moved.rho).abs() < 1e-12);
        let sym = spearman(&b, &a).unwrap();
        prop_assert!((base.rho - sym.rho).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base.rho));
        prop_assert!((0.0..=1.0).contains(&base.p_value));
    }

    #[test]
    fn rho_of_self_and_negation(a in prop::collection::vec(-5.0f64..5.0, 3..30)) {
        let a = distinct(a);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        prop_assert!((spearman(&a, &a).unwrap().rho - 1.0).abs() < 1e-12);
        prop_assert!((spearman(&a, &neg).unwrap().rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_is_symmetric_and_full_at_one(a in prop::collection::vec(0.0f64..1.0, 1..40), seed in 0u64..1000, k in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen()).collect();
        let id = ids(a.len());
        let ab = topk_overlap(&id, &a, &b, k).unwrap();
        prop_assert_eq!(ab, topk_overlap(&id, &b, &a, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(topk_overlap(&id, &a, &b, 1.0).unwrap(), 1.0);
    }
}
