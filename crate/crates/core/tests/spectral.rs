use proptest::prelude::*;

use hcl_core::spectral::{
    apply_spectrum_mask, dft2, focal_frequency_loss, idft2, idft2_complex, make_freq_mask, split_spectrum, FreqRegion,
};
use hcl_core::verify::oracles::naive_dft2;
use hcl_core::Tensor;

fn image(max_c: usize, max_side: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_c, 1..=max_side, 1..=max_side).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-1.0f64..1.0, c * h * w).prop_map(move |d| Tensor::new([c, h, w], d).unwrap())
    })
}

fn pair(side: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    let plane = || prop::collection::vec(0.0f64..1.0, 3 * side * side);
    (plane(), plane()).prop_map(move |(a, b)| (Tensor::new([3, side, side], a).unwrap(), Tensor::new([3, side, side], b).unwrap()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_transform_matches_direct_sum(t in image(2, 9)) {
        let spec = dft2(&t).unwrap();
        let (re, im) = naive_dft2(&t);
        let scale = t.data().len() as f64;
        prop_assert!(max_abs_diff(spec.re(), &re) <= 1e-9 * scale);
        prop_assert!(max_abs_diff(spec.im(), &im) <= 1e-9 * scale);
    }

    #[test]
    fn inverse_recovers_the_image(t in image(3, 16)) {
        let (re, im) = idft2_complex(&dft2(&t).unwrap());
        prop_assert!(max_abs_diff(re.data(), t.data()) < 1e-12);
        prop_assert!(im.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn energy_is_preserved(t in image(3, 16)) {
        let e = dft2(&t).unwrap().energy();
        let plane = (t.shape()[1] * t.shape()[2]) as f64;
        let spatial: f64 = t.data().iter().map(|v| v * v).sum();
        prop_assert!((e / plane - spatial).abs() <= 1e-9 * spatial.max(1.0));
    }

    #[test]
    fn bands_partition_the_spectrum(t in image(2, 16), radius in 0.5f64..8.0) {
        let spec = dft2(&t).unwrap();
        let (low, high) = split_spectrum(&spec, radius).unwrap();
        let sum = low.add(&high).unwrap();
        prop_assert_eq!(sum.re(), spec.re());
        prop_assert_eq!(sum.im(), spec.im());
        for (l, h) in low.re().iter().zip(high.re()) {
            prop_assert!(*l == 0.0 || *h == 0.0);
        }
    }

    #[test]
    fn masked_views_stay_real_and_linear(
        (a, b) in pair(16),
        ratio in 0.05f64..0.95,
        seed in any::<u64>(),
        high in any::<bool>(),
    ) {
        let region = if high { FreqRegion::High } else { FreqRegion::Low };
        let mask = make_freq_mask(16, 16, region, ratio, 4.0, seed).unwrap();
        let ma = apply_spectrum_mask(&a, &mask).unwrap();
        let mb = apply_spectrum_mask(&b, &mask).unwrap();
        let sum = Tensor::new([3, 16, 16], a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let msum = apply_spectrum_mask(&sum, &mask).unwrap();
        let added: Vec<f64> = ma.data().iter().zip(mb.data()).map(|(x, y)| x + y).collect();
        prop_assert!(max_abs_diff(msum.data(), &added) < 1e-12);

        // the mask keeps conjugate pairs together, so the inverse has no
        // imaginary part
        let spec = dft2(&a).unwrap();
        let (lo, hi) = split_spectrum(&spec, mask.radius).unwrap();
        let kept = match region {
            FreqRegion::Low => lo.mask(&mask.grid).unwrap().add(&hi).unwrap(),
            FreqRegion::High => lo.add(&hi.mask(&mask.grid).unwrap()).unwrap(),
        };
        let (_, im) = idft2_complex(&kept);
        prop_assert!(im.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn focal_loss_matches_direct_sum((a, b) in pair(6), beta in 0.0f64..2.0) {
        let got = focal_frequency_loss(&dft2(&a).unwrap(), &dft2(&b).unwrap(), beta).unwrap();
        let (ra, ia) = naive_dft2(&a);
        let (rb, ib) = naive_dft2(&b);
        let expect = ra.iter().zip(&ia).zip(rb.iter().zip(&ib))
            .map(|((r1, i1), (r2, i2))| ((r1 - r2).powi(2) + (i1 - i2).powi(2)).sqrt().powf(beta + 2.0))
            .sum::<f64>() / ra.len() as f64;
        prop_assert!((got - expect).abs() <= 1e-9 * expect.max(1.0));
        prop_assert!(focal_frequency_loss(&dft2(&a).unwrap(), &dft2(&a).unwrap(), beta).unwrap() == 0.0);
    }
}

#[test]
fn real_part_of_inverse_is_the_image() {
    let t = Tensor::from_fn([1, 4, 6], |i| (i as f64).sin());
    let back = idft2(&dft2(&t).unwrap());
    assert!(max_abs_diff(back.data(), t.data()) < 1e-14);
}
