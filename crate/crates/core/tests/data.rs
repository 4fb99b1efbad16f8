use proptest::prelude::*;

use hcl_core::data::metrics::{mae, nearest_foreground};
use hcl_core::data::scene::{MAX_COVERAGE, MIN_COVERAGE};
use hcl_core::data::{degrade, evaluate_metrics, gen_scene, DegradationKind, SceneSpec};
use hcl_core::verify::oracles::{mae_loop, nearest_foreground_loop};
use hcl_core::{HclError, Tensor};

fn kind() -> impl Strategy<Value = DegradationKind> {
    prop::sample::select(DegradationKind::ALL.to_vec())
}

fn rgb(side: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..=1.0, 3 * side * side).prop_map(move |d| Tensor::new([3, side, side], d).unwrap())
}

/// Probability map and a mask with at least one foreground pixel.
fn scored(side: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    (
        prop::collection::vec(0.0f64..=1.0, side * side),
        prop::collection::vec(any::<bool>(), side * side),
        0..side * side,
    )
        .prop_map(move |(p, mut g, forced)| {
            g[forced] = true;
            let gt = g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            (Tensor::new([side, side], p).unwrap(), Tensor::new([side, side], gt).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn degradations_keep_shape_and_range(img in rgb(12), k in kind(), severity in 1u8..=5, seed in any::<u64>()) {
        let out = degrade(&img, k, severity, seed).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(degrade(&img, k, severity, seed).unwrap(), out);
    }

    #[test]
    fn severities_outside_one_to_five_are_rejected(img in rgb(4), k in kind(), severity in prop_oneof![Just(0u8), 6u8..]) {
        prop_assert!(degrade(&img, k, severity, 0).is_err());
    }

    #[test]
    fn metrics_lie_in_the_unit_interval((pred, gt) in scored(10)) {
        let m = evaluate_metrics(&pred, &gt).unwrap();
        for v in [m.s_measure, m.e_measure, m.wfbeta, m.mae] {
            prop_assert!((0.0..=1.0).contains(&v), "{m:?}");
        }
    }

    #[test]
    fn binary_prediction_equal_to_the_mask_is_perfect((_, gt) in scored(10)) {
        let m = evaluate_metrics(&gt, &gt).unwrap();
        prop_assert_eq!(m.mae, 0.0);
        for v in [m.s_measure, m.e_measure, m.wfbeta] {
            prop_assert!((v - 1.0).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn any_error_spoils_a_perfect_score((_, gt) in scored(10), flip in 0usize..100) {
        let mut d = gt.data().to_vec();
        d[flip] = 1.0 - d[flip];
        let m = evaluate_metrics(&Tensor::new([10, 10], d).unwrap(), &gt).unwrap();
        prop_assert!(m.mae > 0.0);
        prop_assert!(m.s_measure < 1.0 && m.e_measure < 1.0 && m.wfbeta < 1.0, "{m:?}");
    }

    #[test]
    fn mae_matches_the_loop((pred, gt) in scored(10)) {
        let bools: Vec<bool> = gt.data().iter().map(|&v| v >= 0.5).collect();
        prop_assert!((mae(pred.data(), &bools) - mae_loop(pred.data(), gt.data())).abs() < 1e-15);
        let m = evaluate_metrics(&pred, &gt).unwrap();
        prop_assert!((m.mae - mae_loop(pred.data(), gt.data())).abs() < 1e-15);
    }

    #[test]
    fn distance_transform_matches_exhaustive_search(
        (h, w) in (1usize..14, 1usize..14),
        cells in prop::collection::vec(any::<bool>(), 196),
        forced in 0usize..196,
    ) {
        let mut gt: Vec<bool> = cells[..h * w].to_vec();
        gt[forced % (h * w)] = true;
        let (d2, idx) = nearest_foreground(&gt, h, w);
        prop_assert_eq!(&d2, &nearest_foreground_loop(&gt, w));
        for k in 0..h * w {
            prop_assert!(gt[idx[k]]);
            let (di, dj) = ((idx[k] / w) as f64 - (k / w) as f64, (idx[k] % w) as f64 - (k % w) as f64);
            prop_assert_eq!(di * di + dj * dj, d2[k]);
        }
    }
}

#[test]
fn every_training_seed_yields_a_valid_scene() {
    for seed in 0..200 {
        let (image, mask) = gen_scene(&SceneSpec::new(32, 0.7, seed)).unwrap();
        assert_eq!(image.shape(), [3, 32, 32]);
        assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let coverage = mask.mean();
        assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&coverage), "seed {seed}: {coverage}");
    }
}

#[test]
fn scenes_are_reproducible_and_distinct() {
    let a = gen_scene(&SceneSpec::new(32, 0.5, 9)).unwrap();
    assert_eq!(gen_scene(&SceneSpec::new(32, 0.5, 9)).unwrap(), a);
    assert_ne!(gen_scene(&SceneSpec::new(32, 0.5, 10)).unwrap().1, a.1);
}

#[test]
fn camouflage_only_changes_the_object() {
    let (image, _) = gen_scene(&SceneSpec::new(32, 0.0, 4)).unwrap();
    let (other, mask) = gen_scene(&SceneSpec::new(32, 1.0, 4)).unwrap();
    let outside = (0..32 * 32).filter(|&k| mask.data()[k] == 0.0);
    for k in outside {
        for c in 0..3 {
            assert_eq!(image.data()[c * 1024 + k], other.data()[c * 1024 + k]);
        }
    }
}

#[test]
fn bad_scene_specs_are_contract_errors() {
    assert!(matches!(gen_scene(&SceneSpec::new(4, 0.5, 0)), Err(HclError::Contract(_))));
    assert!(matches!(gen_scene(&SceneSpec::new(32, 1.5, 0)), Err(HclError::Contract(_))));
}
