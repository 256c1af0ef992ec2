//! Optimization sanity checks for the generator.

use regionnorm::inpaintnet::{Architecture, Discriminator, Generator, GeneratorConfig, LossBundle, Trainer};
use regionnorm::pipeline::{SyntheticDatasetSpec, SyntheticKind};
use regionnorm::tensor::AdamConfig;
use regionnorm::{RegionMask, Tensor};

fn hole_mask(size: usize, k: usize) -> RegionMask {
    let mut bits = vec![1u8; size * size];
    let off = (k * 3) % (size / 2);
    for y in off..off + size / 4 {
        for x in off..off + size / 4 {
            bits[y * size + x] = 0;
        }
    }
    RegionMask::from_bits(size, size, bits).unwrap()
}

fn trainer_with(size: usize, optim: AdamConfig) -> (Trainer<f32>, Vec<Tensor<f32>>, Vec<RegionMask>) {
    let cfg = GeneratorConfig {
        image_size: size,
        ..Architecture::Arch5.config()
    };
    let disc = Discriminator::new(cfg.base_channels, 0);
    let generator = Generator::new(cfg, 0).unwrap();
    let t = Trainer::new(generator, disc, LossBundle::l1_only(), optim).unwrap();
    let spec = SyntheticDatasetSpec { count: 10, size, kind: SyntheticKind::Mixed, seed: 3 };
    let images = (0..10).map(|i| spec.image(i)).collect();
    let masks = (0..10).map(|i| hole_mask(size, i)).collect();
    (t, images, masks)
}

/// Mean absolute error in percent of the raw prediction over whole images,
/// plus the same for the composite (holes only differ).
fn l1_percent_pair(t: &mut Trainer<f32>, images: &[Tensor<f32>], masks: &[RegionMask]) -> (f64, f64) {
    let err = |a: &Tensor<f32>, b: &Tensor<f32>| {
        a.data().iter().zip(b.data()).map(|(x, y)| f64::from((x - y).abs())).sum::<f64>() / a.data().len() as f64
    };
    let (mut raw, mut comp) = (0.0, 0.0);
    for (img, m) in images.iter().zip(masks) {
        let out = t.generator.infer(img, std::slice::from_ref(m)).unwrap();
        raw += err(&out.completed, img);
        comp += err(&out.composite, img);
    }
    let n = images.len() as f64;
    (raw / n * 100.0, comp / n * 100.0)
}

fn mean_l1(t: &mut Trainer<f32>, images: &[Tensor<f32>], masks: &[RegionMask]) -> f64 {
    l1_percent_pair(t, images, masks).0
}

fn trainer(size: usize, lr: f64) -> (Trainer<f32>, Vec<Tensor<f32>>, Vec<RegionMask>) {
    trainer_with(size, AdamConfig { lr, ..AdamConfig::default() })
}

#[test]
fn l1_loss_falls_over_the_first_hundred_steps() {
    let (mut t, images, masks) = trainer(32, 1e-3);
    let before = mean_l1(&mut t, &images, &masks);
    for i in 0..100 {
        t.train_step(&images[i % 10], std::slice::from_ref(&masks[i % 10])).unwrap();
    }
    let after = mean_l1(&mut t, &images, &masks);
    assert!(after < before, "training l1 {before:.3}% -> {after:.3}%");
}

#[test]
fn arch5_overfits_ten_small_images() {
    // best of the Adam settings tried; the default lr 1e-4 is far slower
    let optim = AdamConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    let (mut t, images, masks) = trainer_with(32, optim);
    for i in 0..2000 {
        t.train_step(&images[i % 10], std::slice::from_ref(&masks[i % 10])).unwrap();
    }
    // judged on the raw prediction, the quantity the loss trains
    let (raw, comp) = l1_percent_pair(&mut t, &images, &masks);
    eprintln!("arch5 32x32 after 2000 iterations: raw prediction l1 {raw:.3}%, composite l1 {comp:.3}%");
    assert!(raw < 2.0, "raw prediction l1 {raw:.3}% (want < 2%)");
}
