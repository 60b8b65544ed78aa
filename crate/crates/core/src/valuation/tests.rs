use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::corpus::{generate_synthetic_corpus, CorpusBundle, GeneratorSpec};
use crate::tinylm::{hessian, init_model_with_scale, ModelConfig, Objective, TinyModel};

fn bundle() -> CorpusBundle {
    generate_synthetic_corpus(&GeneratorSpec {
        candidates: 12,
        anchors: 5,
        evals: 4,
        pretrain: 20,
        ..GeneratorSpec::default()
    })
    .unwrap()
}

fn model(b: &CorpusBundle, seed: u64) -> TinyModel {
    let c = ModelConfig {
        d_model: 4,
        d_attn: 4,
        n_layers: 1,
        ..ModelConfig::new(b.vocabulary.size())
    };
    init_model_with_scale(c, seed, 0.4).unwrap()
}

fn all_methods() -> ScoreOptions {
    ScoreOptions {
        methods: Method::ALL.into_iter().collect(),
        eta: 1e-3,
        checkpoint_id: "ck".into(),
    }
}

#[test]
fn isolated_demonstration_changes_nothing() {
    let b = bundle();
    let m = model(&b, 1).with_isolation(true);
    for z in &b.candidates[..4] {
        for x in &b.anchors {
            assert_eq!(score_one_shot(&m, z, x).unwrap(), score_zero_shot(&m, x).unwrap());
        }
        assert_eq!(icp_score(&m, z, &b.anchors).unwrap(), 0.0);
        assert_eq!(icp_soft_score(&m, z, &b.anchors).unwrap(), 0.0);
    }
}

#[test]
fn icp_counts_strict_wins() {
    let b = bundle();
    let m = model(&b, 2);
    for z in &b.candidates {
        let mut wins = 0;
        let mut gain = 0.0;
        for x in &b.anchors {
            let os = score_one_shot(&m, z, x).unwrap();
            let zs = score_zero_shot(&m, x).unwrap();
            wins += usize::from(os > zs);
            gain += os - zs;
        }
        let n = b.anchors.len() as f64;
        assert_eq!(icp_score(&m, z, &b.anchors).unwrap(), wins as f64 / n);
        assert!((icp_soft_score(&m, z, &b.anchors).unwrap() - gain / n).abs() < 1e-14);
    }
}

#[test]
fn scored_table_matches_serial_recomputation() {
    let b = bundle();
    let m = model(&b, 3);
    let h = DampedHessian::build(&m, &b.candidates, 0.5).unwrap();
    let anchors = AnchorSet::prepare(&m, &b.anchors, Some(&h)).unwrap();
    let table = score_candidates(&m, &b.candidates, &anchors, &all_methods()).unwrap();
    assert_eq!(table.len(), b.candidates.len());
    let products: Vec<_> = b
        .anchors
        .iter()
        .map(|x| h.inverse_product(&m.grad(x).unwrap(), &x.id).unwrap())
        .collect();
    for rec in table.records() {
        let z = b.candidates.iter().find(|t| t.id == rec.id).unwrap();
        assert_eq!(rec.icp, Some(icp_score(&m, z, &b.anchors).unwrap()));
        assert!((rec.icp_soft.unwrap() - icp_soft_score(&m, z, &b.anchors).unwrap()).abs() < 1e-14);
        assert!((rec.infl_ip.unwrap() - infl_ip_score(&m, z, &b.anchors).unwrap()).abs() < 1e-12);
        assert_eq!(rec.ft, Some(ft_score(&m, z, &b.anchors, 1e-3).unwrap()));
        let hand: f64 = products.iter().map(|p| infl_hessian(&m, z, p).unwrap()).sum::<f64>() / products.len() as f64;
        assert!((rec.infl_hessian.unwrap() - hand).abs() < 1e-10 * hand.abs().max(1.0));
        assert_eq!(rec.lambda, Some(0.5));
        assert_eq!(rec.n_anchors, 5);
        assert_eq!(rec.model_checkpoint, "ck");
    }
}

#[test]
fn requested_methods_only() {
    let b = bundle();
    let m = model(&b, 3);
    let anchors = AnchorSet::prepare(&m, &b.anchors[..4], None).unwrap();
    let opts = ScoreOptions {
        methods: [Method::Icp].into_iter().collect(),
        ..all_methods()
    };
    let table = score_candidates(&m, &b.candidates[..10], &anchors, &opts).unwrap();
    assert_eq!(table.len(), 10);
    for r in table.records() {
        let v = r.icp.unwrap();
        assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&v));
        assert!(r.icp_soft.is_none() && r.infl_ip.is_none() && r.ft.is_none() && r.infl_hessian.is_none());
    }
    let hessian_without_matrix = ScoreOptions {
        methods: [Method::InflHessian].into_iter().collect(),
        ..all_methods()
    };
    assert!(score_candidates(&m, &b.candidates, &anchors, &hessian_without_matrix).is_err());
}

#[test]
fn empty_anchor_set_is_rejected() {
    let b = bundle();
    let m = model(&b, 3);
    assert!(AnchorSet::prepare(&m, &[], None).is_err());
    assert!(icp_score(&m, &b.candidates[0], &[]).is_err());
    assert!(ft_score(&m, &b.candidates[0], &[], 1e-3).is_err());
}

#[test]
fn inner_product_is_symmetric_and_averages() {
    let b = bundle();
    let m = model(&b, 4);
    let (z, x) = (&b.candidates[0], &b.anchors[0]);
    assert_eq!(infl_ip(&m, z, x).unwrap(), infl_ip(&m, x, z).unwrap());
    let mean: f64 = b.anchors.iter().map(|x| infl_ip(&m, z, x).unwrap()).sum::<f64>() / b.anchors.len() as f64;
    assert!((infl_ip_score(&m, z, &b.anchors).unwrap() - mean).abs() < 1e-13);
}

#[test]
fn identity_curvature_reduces_to_inner_product() {
    let b = bundle();
    let m = model(&b, 5);
    let id = DampedHessian::identity(m.num_params());
    for (z, x) in b.candidates.iter().zip(&b.anchors) {
        let p = id.inverse_product(&m.grad(x).unwrap(), &x.id).unwrap();
        assert!(p.relative_residual < 1e-12);
        let ih = infl_hessian(&m, z, &p).unwrap();
        let ip = infl_ip(&m, z, x).unwrap();
        assert!((ih - ip).abs() <= 1e-12 * ip.abs().max(1.0));
    }
}

#[test]
fn heavy_damping_approaches_scaled_inner_product() {
    let b = bundle();
    let m = model(&b, 6);
    let lambda = 1e6;
    let h = DampedHessian::build(&m, &b.candidates, lambda).unwrap();
    for (z, x) in b.candidates.iter().zip(&b.anchors) {
        let p = h.inverse_product(&m.grad(x).unwrap(), &x.id).unwrap();
        assert!(p.relative_residual < 1e-8);
        let ih = infl_hessian(&m, z, &p).unwrap();
        let ip = infl_ip(&m, z, x).unwrap() / lambda;
        assert!((ih - ip).abs() < 1e-4 * ip.abs(), "{ih} vs {ip}");
    }
}

#[test]
fn indefinite_curvature_reports_minimum_damping() {
    let err = DampedHessian::new(-DMatrix::identity(3, 3) * 2.0, 0.5).unwrap_err();
    match err {
        crate::Error::NotPositiveDefinite {
            min_eigenvalue, suggested, ..
        } => {
            assert!((min_eigenvalue + 1.5).abs() < 1e-12);
            assert!((suggested - 2.0).abs() < 1e-12);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(DampedHessian::new(-DMatrix::identity(3, 3) * 2.0, 2.5).is_ok());
}

#[test]
fn relative_damping_scales_mean_diagonal() {
    let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 6.0]));
    assert!((relative_damping(&h, 1e-3) - 3e-3).abs() < 1e-15);
}

/// Multinomial logistic loss of a 3-class head on a scalar feature has
/// Hessian `phi^2 (diag(p) - p p^T)` in the three weights.
#[test]
fn logistic_head_hessian_matches_closed_form() {
    let head = ConvexHead::new(3, 1, false, HeadLoss::CrossEntropy)
        .with_params(vec![0.3, -0.2, 0.5])
        .unwrap();
    let phi = 1.7;
    let ex = HeadExample {
        id: "e".into(),
        features: vec![vec![phi]],
        targets: vec![2],
    };
    let s: Vec<f64> = [0.3, -0.2, 0.5].iter().map(|w| w * phi).collect();
    let z: f64 = s.iter().map(|v| v.exp()).sum();
    let p: Vec<f64> = s.iter().map(|v| v.exp() / z).collect();
    let hand = DMatrix::from_fn(3, 3, |i, j| phi * phi * (if i == j { p[i] } else { 0.0 } - p[i] * p[j]));
    let fd = hessian(&head, &[ex], 0.0).unwrap();
    assert!((fd - hand).amax() < 1e-6);
}

#[test]
fn quadratic_head_residual_halves_with_eta() {
    let head = ConvexHead::new(3, 2, true, HeadLoss::Squared);
    let z = HeadExample {
        id: "z".into(),
        features: vec![vec![0.5, -1.0], vec![1.5, 0.2]],
        targets: vec![0, 2],
    };
    let x = HeadExample {
        id: "x".into(),
        features: vec![vec![-0.3, 0.8]],
        targets: vec![1],
    };
    let r1 = first_order_residual(&head, &z, &x, 1e-2).unwrap();
    let r2 = first_order_residual(&head, &z, &x, 5e-3).unwrap();
    assert!((r2 / r1 - 0.5).abs() < 1e-6);
    assert!(first_order_residual(&head, &z, &x, 0.0).is_err());
}

#[test]
fn one_step_score_is_zero_without_a_step() {
    let b = bundle();
    let m = model(&b, 7);
    for z in &b.candidates[..3] {
        assert_eq!(ft_score(&m, z, &b.anchors, 0.0).unwrap(), 0.0);
    }
}

#[test]
fn zero_upweight_leaves_the_fit_unchanged() {
    let b = bundle();
    let m = model(&b, 8);
    let train = ConvexHead::featurize(&m, &b.candidates[..8]).unwrap();
    let xs = ConvexHead::featurize(&m, &b.anchors).unwrap();
    let head = ConvexHead::for_model(&m, HeadLoss::CrossEntropy);
    let hyper = RetrainHyper::default();
    let est = retraining_oracle(&head, &train, &train[0], &xs[0], 0.0, &hyper).unwrap();
    assert_eq!(est.loss_change, 0.0);
    assert_eq!(est.estimate, 0.0);
}

#[test]
fn score_table_csv_round_trip() {
    let b = bundle();
    let m = model(&b, 9);
    let anchors = AnchorSet::prepare(&m, &b.anchors, None).unwrap();
    let opts = ScoreOptions {
        methods: [Method::Icp, Method::IcpSoft, Method::InflIp, Method::Ft].into_iter().collect(),
        ..all_methods()
    };
    let table = score_candidates(&m, &b.candidates, &anchors, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    table.write_csv(&path).unwrap();
    let back = ScoreTable::read_csv(&path).unwrap();
    assert_eq!(back, table);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("id,icp,icp_soft,infl_ip,infl_hessian,ft,"));
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(back.methods(), vec![Method::Icp, Method::IcpSoft, Method::InflIp, Method::Ft]);
}

#[test]
fn malformed_tables_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "id,score\na,1\n").unwrap();
    assert!(ScoreTable::read_csv(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn icp_is_a_multiple_of_one_over_n(seed in 0u64..1000, n in 1usize..=5) {
        let b = bundle();
        let m = model(&b, seed);
        let v = icp_score(&m, &b.candidates[(seed % 12) as usize], &b.anchors[..n]).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(((v * n as f64) - (v * n as f64).round()).abs() < 1e-12);
    }
}
