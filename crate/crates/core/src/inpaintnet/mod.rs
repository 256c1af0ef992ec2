//! Inpainting generator and PatchGAN discriminator with swappable
//! normalization per stage, the training step, and checkpoints.

pub mod checkpoint;
mod config;
mod generator;
mod layers;
mod train;

pub use config::{build_architecture, Architecture, GeneratorConfig};
pub use generator::{
    Discriminator, Generator, GeneratorOutput, Inference, LayerDiagnostics, IMAGE_CHANNELS, LEAKY_SLOPE,
};
pub use layers::{Conv2d, ConvTranspose2d, WEIGHT_STD};
pub use train::{discriminator_loss, generator_adv_loss, AdvKind, LossBundle, StepLog, Trainer};

pub(crate) use config::parse_value;

use crate::error::Result;
use crate::masks::RegionMask;
use crate::tensor::{Element, Tape, Tensor};

/// Keeps `original` where the mask is 1 and `completed` in the holes.
pub fn composite<T: Element>(completed: &Tensor<T>, original: &Tensor<T>, masks: &[RegionMask]) -> Result<Tensor<T>> {
    let tape = Tape::new();
    Ok(tape.constant(completed.clone()).composite_with(original, masks)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{regular_square_mask, RegionMask};
    use crate::norm::NormKind;
    use crate::tensor::{AdamConfig, Module, Shape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(arch: Architecture, size: usize) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: 4,
            image_size: size,
            resblock_count: 1,
            ..arch.config()
        }
    }

    fn images(n: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(Shape::new(n, 3, size, size), 0.0, 1.0, &mut rng)
    }

    #[test]
    fn output_matches_input_size_and_range() {
        for size in [32, 64] {
            let mut g = Generator::<f32>::new(tiny(Architecture::Arch5, size), 1).unwrap();
            let x = images(2, size, 2);
            let m = vec![regular_square_mask(size, size).unwrap()];
            let out = g.infer(&x, &m).unwrap();
            assert_eq!(out.completed.shape(), x.shape());
            assert!(out.completed.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn empty_hole_composite_is_the_input() {
        let mut g = Generator::<f32>::new(tiny(Architecture::Arch3, 32), 1).unwrap();
        let x = images(1, 32, 3);
        let out = g.infer(&x, &[RegionMask::ones(32, 32)]).unwrap();
        assert_eq!(out.composite, x);
    }

    #[test]
    fn composite_rules() {
        let c = images(1, 8, 4);
        let o = images(1, 8, 5);
        assert_eq!(composite(&c, &o, &[RegionMask::ones(8, 8)]).unwrap(), o);
        assert_eq!(composite(&c, &o, &[RegionMask::zeros(8, 8)]).unwrap(), c);
        let m = [regular_square_mask(8, 8).unwrap()];
        let once = composite(&c, &o, &m).unwrap();
        assert_eq!(composite(&once, &o, &m).unwrap(), once);
    }

    #[test]
    fn init_is_deterministic() {
        let x = images(1, 32, 6);
        let m = [regular_square_mask(32, 32).unwrap()];
        let a = Generator::<f32>::new(tiny(Architecture::Arch6, 32), 9).unwrap().infer(&x, &m).unwrap();
        let b = Generator::<f32>::new(tiny(Architecture::Arch6, 32), 9).unwrap().infer(&x, &m).unwrap();
        assert_eq!(a.completed, b.completed);
    }

    #[test]
    fn decoder_norm_does_not_touch_encoder() {
        let x = images(1, 32, 7);
        let m = [regular_square_mask(32, 32).unwrap()];
        let mut encs = Vec::new();
        for dec in [NormKind::In, NormKind::RnL, NormKind::Bn, NormKind::None] {
            let mut cfg = tiny(Architecture::Arch1, 32);
            cfg.norm_decoder = dec;
            let mut g = Generator::<f32>::new(cfg, 3).unwrap();
            let tape = Tape::new();
            encs.push(g.forward(&tape, &x, &m, false).unwrap().encoder);
        }
        assert!(encs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rnl_layers_report_diagnostics() {
        let mut g = Generator::<f32>::new(tiny(Architecture::Arch5, 32), 1).unwrap();
        let out = g.infer(&images(1, 32, 8), &[regular_square_mask(32, 32).unwrap()]).unwrap();
        // two per resblock, two in the decoder
        assert_eq!(out.diagnostics.len(), 4);
        assert_eq!(out.diagnostics[0].layer, "resblock.0.norm1");
        assert_eq!(out.diagnostics[3].rnl.response.shape(), Shape::new(1, 1, 32, 32));
    }

    #[test]
    fn every_parameter_gets_a_gradient() {
        for arch in Architecture::ALL {
            let g = Generator::<f32>::new(tiny(arch, 32), 1).unwrap();
            let d = Discriminator::new(4, 1);
            let mut t = Trainer::new(g, d, LossBundle::default(), AdamConfig::default()).unwrap();
            t.train_step(&images(2, 32, 9), &[regular_square_mask(32, 32).unwrap()]).unwrap();
            for p in t.generator.params().into_iter().filter(|p| p.trainable()) {
                assert!(p.grad().is_some(), "{arch}: {} has no gradient", p.name());
            }
            for p in t.discriminator.params() {
                assert!(p.grad().is_some(), "{arch}: {} has no gradient", p.name());
            }
        }
    }

    #[test]
    fn discriminator_step_lowers_its_loss() {
        let g = Generator::<f32>::new(tiny(Architecture::Baseline, 32), 1).unwrap();
        let mut t = Trainer::new(g, Discriminator::new(4, 2), LossBundle::default(), AdamConfig::default()).unwrap();
        let real = images(2, 32, 10);
        let fake = images(2, 32, 11).map(|v| v * 0.2);
        let before = t.discriminator_loss_value(&real, &fake).unwrap();
        t.discriminator_step(&real, &fake).unwrap();
        assert!(t.discriminator_loss_value(&real, &fake).unwrap() < before);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let run = || {
            let g = Generator::<f32>::new(tiny(Architecture::Arch5, 32), 4).unwrap();
            let mut t = Trainer::new(g, Discriminator::new(4, 4), LossBundle::default(), AdamConfig::default()).unwrap();
            let m = [regular_square_mask(32, 32).unwrap()];
            (0..3).map(|i| t.train_step(&images(1, 32, i), &m).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adversarial_off_skips_the_critic() {
        let g = Generator::<f32>::new(tiny(Architecture::Baseline, 32), 1).unwrap();
        let mut t = Trainer::new(g, Discriminator::new(4, 1), LossBundle::l1_only(), AdamConfig::default()).unwrap();
        let log = t.train_step(&images(1, 32, 1), &[regular_square_mask(32, 32).unwrap()]).unwrap();
        assert_eq!(log.loss_d, None);
        assert_eq!(log.loss_g, log.loss_l1);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        for arch in [Architecture::Arch5, Architecture::Bn] {
            let mut g = Generator::<f32>::new(tiny(arch, 32), 5).unwrap();
            // move BN running stats away from their initial values
            let tape = Tape::new();
            g.forward(&tape, &images(2, 32, 1), &[regular_square_mask(32, 32).unwrap()], true).unwrap();
            let bytes = checkpoint::to_bytes(&g);
            let mut back = checkpoint::from_bytes::<f32>(&bytes).unwrap();
            assert_eq!(checkpoint::to_bytes(&back), bytes);
            let x = images(1, 32, 2);
            let m = [regular_square_mask(32, 32).unwrap()];
            assert_eq!(back.infer(&x, &m).unwrap().completed, g.infer(&x, &m).unwrap().completed);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let g = Generator::<f32>::new(tiny(Architecture::Baseline, 32), 5).unwrap();
        let bytes = checkpoint::to_bytes(&g);
        assert!(checkpoint::from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(checkpoint::from_bytes::<f64>(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint::from_bytes::<f32>(&bad).is_err());
    }

    #[test]
    fn threshold_update_reaches_layers() {
        let mut g = Generator::<f32>::new(tiny(Architecture::Arch6, 32), 5).unwrap();
        g.set_rnl_threshold(0.3).unwrap();
        assert_eq!(g.config().rnl_threshold, 0.3);
        assert!(g.set_rnl_threshold(1.0).is_err());
    }
}
