//! Encoder, dilated residual blocks, decoder; every norm slot is set by
//! [`GeneratorConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::GeneratorConfig;
use super::layers::{Conv2d, ConvTranspose2d};
use crate::error::{Error, Result};
use crate::masks::{self, downsample_mask, RegionMask};
use crate::norm::{NormContext, NormKind, NormLayer, RnlDiagnostics, DEFAULT_EPS};
use crate::tensor::{Element, Module, Parameter, Shape, Tape, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;

/// Response map and self-generated mask of one RN-L layer.
#[derive(Clone, Debug)]
pub struct LayerDiagnostics<T> {
    pub layer: String,
    pub rnl: RnlDiagnostics<T>,
}

pub struct GeneratorOutput<'t, T> {
    /// Network prediction for the whole image, in `[0, 1]`.
    pub completed: Var<'t, T>,
    /// Activation after the last encoder stage.
    pub encoder: Tensor<T>,
    pub diagnostics: Vec<LayerDiagnostics<T>>,
}

#[derive(Clone, Debug)]
struct ConvNorm<T> {
    conv: Conv2d<T>,
    norm: NormLayer<T>,
    /// Downsampling of this layer's output relative to the input.
    factor: usize,
}

#[derive(Clone, Debug)]
struct ResBlock<T> {
    conv1: Conv2d<T>,
    norm1: NormLayer<T>,
    conv2: Conv2d<T>,
    norm2: NormLayer<T>,
}

#[derive(Clone, Debug)]
struct UpNorm<T> {
    deconv: ConvTranspose2d<T>,
    norm: NormLayer<T>,
    factor: usize,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    encoder: Vec<ConvNorm<T>>,
    resblocks: Vec<ResBlock<T>>,
    decoder: Vec<UpNorm<T>>,
    output: Conv2d<T>,
    eps: f64,
}

/// Per-stage generator streams: a change to one stage leaves the initial
/// weights of the others untouched.
fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let t = config.rnl_threshold;
        let norm = |kind: NormKind, name: String, c: usize, rng: &mut ChaCha8Rng| -> Result<NormLayer<T>> {
            let mut layer = NormLayer::new(kind, &name, c, t, rng)?;
            if let NormLayer::RnL(l) = &mut layer {
                l.soft_train = config.rnl_soft_train;
            }
            Ok(layer)
        };

        let mut rng = stage_rng(seed, 0);
        let enc_spec = [
            (IMAGE_CHANNELS + 1, b, 7, 1, 3, 1),
            (b, 2 * b, 4, 2, 1, 2),
            (2 * b, 4 * b, 4, 2, 1, 4),
        ];
        let mut encoder = Vec::new();
        for (i, &(cin, cout, k, s, p, factor)) in enc_spec.iter().enumerate() {
            let conv = Conv2d::new(&format!("encoder.{i}.conv"), cin, cout, k, s, p, 1, &mut rng);
            let norm = norm(config.norm_encoder, format!("encoder.{i}.norm"), cout, &mut rng)?;
            encoder.push(ConvNorm { conv, norm, factor });
        }

        let mut rng = stage_rng(seed, 1);
        let c = 4 * b;
        let mut resblocks = Vec::new();
        for i in 0..config.resblock_count {
            let conv1 = Conv2d::new(&format!("resblock.{i}.conv1"), c, c, 3, 1, 2, 2, &mut rng);
            let norm1 = norm(config.norm_resblocks, format!("resblock.{i}.norm1"), c, &mut rng)?;
            let conv2 = Conv2d::new(&format!("resblock.{i}.conv2"), c, c, 3, 1, 2, 2, &mut rng);
            let norm2 = norm(config.norm_resblocks, format!("resblock.{i}.norm2"), c, &mut rng)?;
            resblocks.push(ResBlock { conv1, norm1, conv2, norm2 });
        }

        let mut rng = stage_rng(seed, 2);
        let mut decoder = Vec::new();
        for (i, &(cin, cout, factor)) in [(4 * b, 2 * b, 2), (2 * b, b, 1)].iter().enumerate() {
            let deconv = ConvTranspose2d::new(&format!("decoder.{i}.deconv"), cin, cout, 4, 2, 1, &mut rng);
            let norm = norm(config.norm_decoder, format!("decoder.{i}.norm"), cout, &mut rng)?;
            decoder.push(UpNorm { deconv, norm, factor });
        }
        let output = Conv2d::new("decoder.out", b, IMAGE_CHANNELS, 7, 1, 3, 1, &mut rng);

        Ok(Generator {
            config,
            encoder,
            resblocks,
            decoder,
            output,
            eps: DEFAULT_EPS,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Updates every RN-L layer and the stored config.
    pub fn set_rnl_threshold(&mut self, t: f64) -> Result<()> {
        for layer in self.norm_layers_mut() {
            if let NormLayer::RnL(l) = layer {
                l.set_threshold(t)?;
            }
        }
        self.config.rnl_threshold = t;
        Ok(())
    }

    fn norm_layers_mut(&mut self) -> impl Iterator<Item = &mut NormLayer<T>> {
        self.encoder
            .iter_mut()
            .map(|l| &mut l.norm)
            .chain(self.resblocks.iter_mut().flat_map(|r| [&mut r.norm1, &mut r.norm2]))
            .chain(self.decoder.iter_mut().map(|l| &mut l.norm))
    }

    /// Builds the 4-channel network input: holes zeroed, mask appended.
    pub fn network_input(images: &Tensor<T>, masks: &[RegionMask]) -> Result<Tensor<T>> {
        let s = images.shape();
        if s.c != IMAGE_CHANNELS {
            return Err(Error::shape(format!("generator expects RGB input, got {s}")));
        }
        masks::check_batch(masks, s)?;
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * (s.c + 1) * plane);
        for n in 0..s.n {
            let bits = masks::for_sample(masks, n).bits();
            for c in 0..s.c {
                let src = images.plane(n, c);
                data.extend(src.iter().zip(bits).map(|(&v, &b)| if b == 1 { v } else { T::zero() }));
            }
            data.extend(bits.iter().map(|&b| T::of(b as f64)));
        }
        Tensor::from_vec(Shape::new(s.n, s.c + 1, s.h, s.w), data)
    }

    /// Runs the generator. `train` selects batch statistics for BN and the
    /// soft-train option of RN-L.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape<T>,
        images: &Tensor<T>,
        masks: &[RegionMask],
        train: bool,
    ) -> Result<GeneratorOutput<'t, T>> {
        let s = images.shape();
        if !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
            return Err(Error::shape(format!("image {s} is not a multiple of 4 in size")));
        }
        let input = Self::network_input(images, masks)?;
        let pyramid = [1usize, 2, 4]
            .iter()
            .map(|&f| masks.iter().map(|m| downsample_mask(m, f)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let level = |factor: usize| -> &[RegionMask] { &pyramid[factor.trailing_zeros() as usize] };
        let eps = self.eps;
        let ctx = |factor: usize| NormContext {
            masks: Some(level(factor)),
            train,
            eps,
        };
        let mut diagnostics = Vec::new();
        let mut record = |name: String, d: Option<RnlDiagnostics<T>>| {
            if let Some(rnl) = d {
                diagnostics.push(LayerDiagnostics { layer: name, rnl });
            }
        };

        let mut x = tape.constant(input);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            let y = l.conv.forward(tape, x)?;
            let (y, d) = l.norm.forward(tape, y, ctx(l.factor))?;
            record(format!("encoder.{i}.norm"), d);
            x = y.relu()?;
        }
        let encoder = x.value();

        for (i, r) in self.resblocks.iter_mut().enumerate() {
            let y = r.conv1.forward(tape, x)?;
            let (y, d) = r.norm1.forward(tape, y, ctx(4))?;
            record(format!("resblock.{i}.norm1"), d);
            let y = r.conv2.forward(tape, y.relu()?)?;
            let (y, d) = r.norm2.forward(tape, y, ctx(4))?;
            record(format!("resblock.{i}.norm2"), d);
            x = x.add(y)?;
        }

        for (i, l) in self.decoder.iter_mut().enumerate() {
            let y = l.deconv.forward(tape, x)?;
            let (y, d) = l.norm.forward(tape, y, ctx(l.factor))?;
            record(format!("decoder.{i}.norm"), d);
            x = y.relu()?;
        }
        let completed = self.output.forward(tape, x)?.sigmoid()?;
        Ok(GeneratorOutput {
            completed,
            encoder,
            diagnostics,
        })
    }

    /// Eval-mode forward: returns the raw prediction, the composite with
    /// known pixels restored, and RN-L diagnostics.
    pub fn infer(&mut self, images: &Tensor<T>, masks: &[RegionMask]) -> Result<Inference<T>> {
        let tape = Tape::new();
        let out = self.forward(&tape, images, masks, false)?;
        let composite = out.completed.composite_with(images, masks)?.value();
        Ok(Inference {
            completed: out.completed.value(),
            composite,
            diagnostics: out.diagnostics,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub completed: Tensor<T>,
    pub composite: Tensor<T>,
    pub diagnostics: Vec<LayerDiagnostics<T>>,
}

impl<T: Element> Module<T> for Generator<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.extend(l.conv.params());
            out.extend(l.norm.params());
        }
        for r in &self.resblocks {
            out.extend(r.conv1.params());
            out.extend(r.norm1.params());
            out.extend(r.conv2.params());
            out.extend(r.norm2.params());
        }
        for l in &self.decoder {
            out.extend(l.deconv.params());
            out.extend(l.norm.params());
        }
        out.extend(self.output.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.extend(l.conv.params_mut());
            out.extend(l.norm.params_mut());
        }
        for r in &mut self.resblocks {
            out.extend(r.conv1.params_mut());
            out.extend(r.norm1.params_mut());
            out.extend(r.conv2.params_mut());
            out.extend(r.norm2.params_mut());
        }
        for l in &mut self.decoder {
            out.extend(l.deconv.params_mut());
            out.extend(l.norm.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }
}

/// PatchGAN critic: 4x4 convolutions with strides 2, 2, 2, 1 and widths
/// `b, 2b, 4b, 8b`, LeakyReLU(0.2), then a 1-channel score map.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    layers: Vec<Conv2d<T>>,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl<T: Element> Discriminator<T> {
    pub fn new(base_channels: usize, seed: u64) -> Self {
        let mut rng = stage_rng(seed, 3);
        let b = base_channels;
        let spec = [
            (IMAGE_CHANNELS, b, 2),
            (b, 2 * b, 2),
            (2 * b, 4 * b, 2),
            (4 * b, 8 * b, 1),
            (8 * b, 1, 1),
        ];
        let layers = spec
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, s))| Conv2d::new(&format!("disc.{i}"), cin, cout, 4, s, 1, 1, &mut rng))
            .collect();
        Discriminator { layers }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let last = self.layers.len() - 1;
        let mut x = x;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, x)?;
            if i < last {
                x = x.leaky_relu(LEAKY_SLOPE)?;
            }
        }
        Ok(x)
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
