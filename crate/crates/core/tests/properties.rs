//! Property tests for the invariants of the tensor, mask, normalization and
//! metric modules.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regionnorm::inpaintnet::composite;
use regionnorm::masks::{downsample_mask, generate, CoverageInterval, MaskKind, MaskSpec};
use regionnorm::metrics::{l1_percent, psnr, ssim, Image};
use regionnorm::norm::{region_normalize, shift_report, threshold_mask, Region, RnL, DEFAULT_EPS};
use regionnorm::{RegionMask, Shape, Tape, Tensor};

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = RegionMask> {
    proptest::collection::vec(0u8..2, h * w).prop_map(move |bits| RegionMask::from_bits(h, w, bits).unwrap())
}

fn tensor_strategy(shape: Shape, scale: f64) -> impl Strategy<Value = Tensor<f64>> {
    proptest::collection::vec(-scale..scale, shape.numel()).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0..255.0f64, w * h * 3).prop_map(move |d| Image::new(w, h, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn irregular_masks_are_binary_and_in_interval(seed in any::<u64>(), index in 0u64..1000, decile in 1usize..6) {
        let coverage = CoverageInterval::new(decile as f64 / 10.0, (decile + 1) as f64 / 10.0).unwrap();
        let spec = MaskSpec { kind: MaskKind::Irregular, coverage, seed };
        let m = generate(32, 32, &spec, index).unwrap();
        prop_assert!(m.bits().iter().all(|&b| b <= 1));
        prop_assert!(coverage.contains(m.coverage_ratio()));
        prop_assert_eq!(generate(32, 32, &spec, index).unwrap(), m);
    }

    #[test]
    fn downsampling_keeps_masks_binary(m in mask_strategy(16, 16), f in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let d = downsample_mask(&m, f).unwrap();
        prop_assert!(d.bits().iter().all(|&b| b <= 1));
    }

    #[test]
    fn shift_formula_matches_filled_moments(
        plane in proptest::collection::vec(-100.0..300.0f64, 30),
        mask in mask_strategy(5, 6),
        fill in 0.0..=255.0f64,
    ) {
        let r = shift_report(&plane, &mask, fill).unwrap();
        prop_assert!((r.mu2_analytic - r.mu2_empirical).abs() < 1e-9);
        prop_assert!((r.sigma2_analytic - r.sigma2_empirical).abs() < 1e-9);
        prop_assert_eq!(r.n_m + r.n_u, 30);
    }

    #[test]
    fn each_region_is_standardized(x in tensor_strategy(Shape::new(1, 2, 6, 6), 50.0), mask in mask_strategy(6, 6)) {
        let tape = Tape::new();
        let (y, stats) = region_normalize(tape.constant(x), std::slice::from_ref(&mask), DEFAULT_EPS).unwrap();
        let y = y.value();
        for c in 0..2 {
            for region in Region::ALL {
                let m = stats.get(0, c, region);
                if m.count < 2 {
                    continue;
                }
                let var_x = m.std * m.std - DEFAULT_EPS;
                if var_x < 1e-2 {
                    continue;
                }
                let vals: Vec<f64> = y
                    .plane(0, c)
                    .iter()
                    .zip(mask.bits())
                    .filter(|(_, &b)| Region::of_bit(b) == region)
                    .map(|(v, _)| *v)
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-6, "region mean {mean}");
                let expected = var_x / (var_x + DEFAULT_EPS);
                prop_assert!((var - expected).abs() < 1e-5, "region var {var} vs {expected}");
            }
        }
    }

    #[test]
    fn conv_and_transpose_are_adjoint(
        x in tensor_strategy(Shape::new(1, 2, 8, 8), 1.0),
        w in tensor_strategy(Shape::new(3, 2, 4, 4), 1.0),
        y in tensor_strategy(Shape::new(1, 3, 4, 4), 1.0),
    ) {
        let tape = Tape::new();
        let cx = tape.constant(x.clone()).conv2d(tape.constant(w.clone()), None, 2, 1, 1).unwrap().value();
        let ty = tape.constant(y.clone()).conv_transpose2d(tape.constant(w), None, 2, 1).unwrap().value();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn subtracting_the_channel_mean_centres_every_pixel(x in tensor_strategy(Shape::new(2, 4, 3, 3), 10.0)) {
        let tape = Tape::new();
        let xv = tape.constant(x);
        let centred = xv.sub(xv.channel_avg_pool().unwrap()).unwrap().channel_avg_pool().unwrap().value();
        prop_assert!(centred.data().iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn composite_keeps_known_pixels(
        c in tensor_strategy(Shape::new(1, 3, 5, 5), 1.0),
        o in tensor_strategy(Shape::new(1, 3, 5, 5), 1.0),
        m in mask_strategy(5, 5),
    ) {
        let out = composite(&c, &o, std::slice::from_ref(&m)).unwrap();
        for ch in 0..3 {
            for (i, &b) in m.bits().iter().enumerate() {
                let want = if b == 1 { o.plane(0, ch)[i] } else { c.plane(0, ch)[i] };
                prop_assert_eq!(out.plane(0, ch)[i].to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn metrics_are_symmetric(a in image_strategy(12, 12), b in image_strategy(12, 12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(l1_percent(&a, &b).unwrap(), l1_percent(&b, &a).unwrap());
    }

    #[test]
    fn identical_images_hit_the_sentinels(a in image_strategy(12, 12)) {
        prop_assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(l1_percent(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_falls_as_constant_error_grows(base in 0.0..100.0f64, e in 1.0..100.0f64, step in 0.5..50.0f64) {
        let flat = |v: f64| Image::new(4, 4, 3, vec![v; 48]).unwrap();
        let near = psnr(&flat(base), &flat(base + e)).unwrap();
        let far = psnr(&flat(base), &flat(base + e + step)).unwrap();
        prop_assert!(far < near);
    }
}

#[test]
fn mean_coverage_rises_with_the_interval() {
    let means: Vec<f64> = CoverageInterval::deciles()[1..]
        .iter()
        .map(|&coverage| {
            let spec = MaskSpec { kind: MaskKind::Irregular, coverage, seed: 4 };
            (0..20).map(|i| generate(64, 64, &spec, i).unwrap().coverage_ratio()).sum::<f64>() / 20.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
}

#[test]
fn learned_mask_layer_starts_as_plain_region_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let layer = RnL::<f64>::new("l", 0.8, &mut rng).unwrap();
    let x = Tensor::<f64>::randn(Shape::new(2, 4, 6, 6), 3.0, &mut rng);
    let tape = Tape::new();
    let (y, diag) = layer.forward(&tape, tape.constant(x.clone()), false, DEFAULT_EPS).unwrap();
    let masks = threshold_mask(&diag.response, 0.8).unwrap();
    let (plain, _) = region_normalize(tape.constant(x), &masks, DEFAULT_EPS).unwrap();
    assert!(y.value().max_abs_diff(&plain.value()) < 1e-6);
}

#[test]
fn tape_runs_are_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(3, 2, 3, 3), 1.0, &mut rng);
        let tape = Tape::new();
        let (xv, wv) = (tape.constant(x), tape.constant(w));
        let loss = xv.conv2d(wv, None, 1, 1, 1).unwrap().tanh().unwrap().mean().unwrap();
        let grads = tape.backward(loss).unwrap();
        (loss.value(), grads.wrt(xv).cloned(), grads.wrt(wv).cloned())
    };
    assert_eq!(run(), run());
}
