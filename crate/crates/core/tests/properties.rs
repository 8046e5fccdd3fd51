mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use prunekit::dca::{inter_kd_loss, output_kd_loss, DcaProjection, ProjectionKind};
use prunekit::hierarchy::{apply_mapping, CoarseMapping, MappingMethod};
use prunekit::metrics::{score_layer, Metric, MetricParams};
use prunekit::planner::{keep_count, select_channels, Rounding};
use prunekit::tensor_io::npy::{load_npy, save_f64, save_i64};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn scores_are_finite_and_non_negative(seed in any::<u64>()) {
        let fx = random_fixture(seed, 30, 4, 3, 4);
        let params = MetricParams { seed: Some(seed), ..Default::default() };
        for metric in Metric::ALL {
            let r = score_layer("l", metric, &fx.acts(), &fx.fine(), &params).unwrap();
            prop_assert_eq!(r.scores.len(), fx.shape[1]);
            for s in r.scores {
                prop_assert!(s.is_finite() && s >= 0.0, "{:?}: {}", metric, s);
            }
        }
    }

    #[test]
    fn scalar_metrics_are_affine_invariant(
        seed in any::<u64>(),
        a in prop_oneof![0.5f64..2.0, -2.0f64..-0.5],
        b in -10.0f64..10.0,
    ) {
        let fx = affine_fixture(seed);
        let moved = affine(&fx, a, b);
        let p = MetricParams::default();
        for metric in Metric::SCALAR {
            let x = score_layer("l", metric, &fx.acts(), &fx.fine(), &p).unwrap();
            let y = score_layer("l", metric, &moved.acts(), &moved.fine(), &p).unwrap();
            for (u, v) in x.scores.iter().zip(&y.scores) {
                prop_assert!(rel_err(*v, *u) <= 1e-9, "{:?}: {} vs {}", metric, u, v);
            }
        }
    }

    #[test]
    fn selection_partitions_channels(
        scores in prop::collection::vec(-5i32..5, 2..80),
        num in 1u64..20,
        eight in any::<bool>(),
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let c = scores.len();
        let ratio = num as f64 / 20.0;
        let rounding = if eight { Rounding::MultipleOf8 } else { Rounding::None };
        let keep = select_channels(&scores, ratio, rounding).unwrap();
        let k = keep_count_oracle(c, num, 20, eight);
        prop_assert_eq!(keep_count(c, ratio, rounding).unwrap(), k);
        prop_assert_eq!(&keep, &top_k_oracle(&scores, k));
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(!keep.is_empty() && keep.len() <= c);
        let kept_min = keep.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for i in (0..c).filter(|i| !keep.contains(i)) {
            prop_assert!(scores[i] <= kept_min);
        }
    }

    #[test]
    fn keeping_less_selects_a_subset(
        scores in prop::collection::vec(-1000.0f64..1000.0, 2..64),
        r1 in 0.001f64..0.999,
        r2 in 0.001f64..0.999,
    ) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let big = select_channels(&scores, lo, Rounding::None).unwrap();
        let small = select_channels(&scores, hi, Rounding::None).unwrap();
        prop_assert!(small.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn float_arrays_round_trip_bit_exactly(
        dims in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let len: usize = dims.iter().product();
        let mut r = rng(seed);
        let values: Vec<f64> = (0..len).map(|_| 1e3 * normal(&mut r)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.npy");
        save_f64(&path, &dims, &values).unwrap();
        let back = load_npy(&path).unwrap();
        prop_assert_eq!(&back.shape, &dims);
        let got = back.into_f64().unwrap();
        prop_assert!(got.iter().zip(&values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn int_arrays_round_trip(values in prop::collection::vec(any::<i64>(), 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.npy");
        save_i64(&path, &[values.len()], &values).unwrap();
        prop_assert_eq!(load_npy(&path).unwrap().into_i64().unwrap(), values);
    }

    #[test]
    fn mapping_lookup_stays_in_range(
        map in prop::collection::vec(0usize..4, 5..30),
        probe in prop::collection::vec(0usize..30, 0..40),
    ) {
        let c = map.iter().max().unwrap() + 1;
        prop_assume!((0..c).all(|g| map.contains(&g)) && c >= 1 && c < map.len());
        let f = map.len();
        let q = CoarseMapping::new(map, c, MappingMethod::GroundTruth, 0).unwrap();
        let back = CoarseMapping::from_json(&q.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &q);
        let inside: Vec<usize> = probe.iter().copied().filter(|&l| l < f).collect();
        for g in apply_mapping(&inside, &q).unwrap() {
            prop_assert!(g < c);
        }
        if probe.iter().any(|&l| l >= f) {
            prop_assert!(apply_mapping(&probe, &q).is_err());
        }
    }

    #[test]
    fn output_divergence_is_non_negative(seed in any::<u64>(), t in 0.5f64..8.0) {
        let mut r = rng(seed);
        let a = DMatrix::from_fn(5, 6, |_, _| 4.0 * normal(&mut r));
        let b = DMatrix::from_fn(5, 6, |_, _| 4.0 * normal(&mut r));
        prop_assert!(output_kd_loss(&a, &b, t).unwrap() >= 0.0);
        prop_assert_eq!(output_kd_loss(&a, &a, t).unwrap(), 0.0);
    }

    #[test]
    fn intermediate_loss_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = DcaProjection {
            w: DMatrix::from_fn(6, 2, |_, _| normal(&mut r)),
            eigenvalues: vec![1.0, 1.0],
            ridge: 1e-4,
            scheme: None,
            kind: ProjectionKind::Pca,
        };
        let a = DMatrix::from_fn(8, 6, |_, _| normal(&mut r));
        let b = DMatrix::from_fn(8, 6, |_, _| normal(&mut r));
        let ab = inter_kd_loss(&a, &p, &b, &p).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, inter_kd_loss(&b, &p, &a, &p).unwrap());
    }
}
