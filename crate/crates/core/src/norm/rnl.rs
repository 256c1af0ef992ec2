//! Learnable region normalization: the layer derives its own region mask
//! by thresholding a spatial response map computed from the features, and
//! applies a pixel-wise affine transform predicted from the same map.

use rand::Rng;

use super::region::region_normalize;
use crate::error::{Error, Result};
use crate::masks::RegionMask;
use crate::tensor::{Element, Module, Parameter, Shape, Tape, Tensor, Var};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const KERNEL: usize = 3;

/// Response map and the masks thresholded from it, per layer call.
#[derive(Clone, Debug)]
pub struct RnlDiagnostics<T> {
    pub response: Tensor<T>,
    pub masks: Vec<RegionMask>,
}

#[derive(Clone, Debug)]
pub struct RnL<T> {
    /// `1 x 2 x k x k` over `[max-pool, avg-pool]`.
    pub response_weight: Parameter<T>,
    pub response_bias: Parameter<T>,
    pub gamma_weight: Parameter<T>,
    pub gamma_bias: Parameter<T>,
    pub beta_weight: Parameter<T>,
    pub beta_bias: Parameter<T>,
    threshold: f64,
    /// Train with a single region (instance-norm statistics) instead of the
    /// thresholded mask; inference always thresholds.
    pub soft_train: bool,
}

impl<T: Element> RnL<T> {
    /// Response conv ~ N(0, 0.02) so the map starts near 0.5 (below the
    /// default threshold, i.e. one region); gamma conv starts as the
    /// constant 1 and beta conv as 0, so the layer starts as plain
    /// normalization.
    pub fn new<R: Rng + ?Sized>(name: &str, threshold: f64, rng: &mut R) -> Result<Self> {
        check_threshold(threshold)?;
        let k = KERNEL;
        let one = Shape::scalar();
        Ok(RnL {
            response_weight: Parameter::new(
                format!("{name}.response.weight"),
                Tensor::randn(Shape::new(1, 2, k, k), 0.02, rng),
            ),
            response_bias: Parameter::new(format!("{name}.response.bias"), Tensor::zeros(one)),
            gamma_weight: Parameter::new(format!("{name}.gamma.weight"), Tensor::zeros(Shape::new(1, 1, k, k))),
            gamma_bias: Parameter::new(format!("{name}.gamma.bias"), Tensor::ones(one)),
            beta_weight: Parameter::new(format!("{name}.beta.weight"), Tensor::zeros(Shape::new(1, 1, k, k))),
            beta_bias: Parameter::new(format!("{name}.beta.bias"), Tensor::zeros(one)),
            threshold,
            soft_train: false,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(())
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        train: bool,
        eps: f64,
    ) -> Result<(Var<'t, T>, RnlDiagnostics<T>)> {
        let weights = RnlWeights {
            response_weight: tape.param(&self.response_weight),
            response_bias: tape.param(&self.response_bias),
            gamma_weight: tape.param(&self.gamma_weight),
            gamma_bias: tape.param(&self.gamma_bias),
            beta_weight: tape.param(&self.beta_weight),
            beta_bias: tape.param(&self.beta_bias),
        };
        rn_l_forward(x, &weights, self.threshold, train && self.soft_train, eps)
    }
}

/// The six convolution tensors of an RN-L layer bound on a tape.
#[derive(Clone, Copy)]
pub struct RnlWeights<'t, T> {
    pub response_weight: Var<'t, T>,
    pub response_bias: Var<'t, T>,
    pub gamma_weight: Var<'t, T>,
    pub gamma_bias: Var<'t, T>,
    pub beta_weight: Var<'t, T>,
    pub beta_bias: Var<'t, T>,
}

/// Learnable region normalization: threshold the spatial response into a
/// mask (no gradient through the comparison), normalize per region, then
/// apply the pixel-wise affine maps `gamma = conv(response)` and
/// `beta = conv(response)`, broadcast over channels. With `single_region`
/// the statistics come from the whole plane instead.
pub fn rn_l_forward<'t, T: Element>(
    x: Var<'t, T>,
    w: &RnlWeights<'t, T>,
    threshold: f64,
    single_region: bool,
    eps: f64,
) -> Result<(Var<'t, T>, RnlDiagnostics<T>)> {
    let response = spatial_response(x, w.response_weight, w.response_bias)?;
    let thresholded = threshold_mask(&response.value(), threshold)?;
    let stats_masks = if single_region {
        let s = x.shape();
        vec![RegionMask::ones(s.h, s.w)]
    } else {
        thresholded.clone()
    };
    let (normalized, _) = region_normalize(x, &stats_masks, eps)?;
    let pad = w.gamma_weight.shape().h / 2;
    let gamma = response.conv2d(w.gamma_weight, Some(w.gamma_bias), 1, pad, 1)?;
    let beta = response.conv2d(w.beta_weight, Some(w.beta_bias), 1, pad, 1)?;
    let out = normalized.mul(gamma)?.add(beta)?;
    Ok((
        out,
        RnlDiagnostics {
            response: response.value(),
            masks: thresholded,
        },
    ))
}

impl<T: Element> Module<T> for RnL<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.response_weight,
            &self.response_bias,
            &self.gamma_weight,
            &self.gamma_bias,
            &self.beta_weight,
            &self.beta_bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.response_weight,
            &mut self.response_bias,
            &mut self.gamma_weight,
            &mut self.gamma_bias,
            &mut self.beta_weight,
            &mut self.beta_bias,
        ]
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("RN-L threshold must lie in (0, 1), got {t}")))
    }
}

/// `sigmoid(conv([max_c x, mean_c x]))`, an `N x 1 x H x W` map in (0, 1).
/// The convolution keeps the spatial size (odd kernel, same padding).
pub fn spatial_response<'t, T: Element>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let k = weight.shape().h;
    if k.is_multiple_of(2) || weight.shape().c != 2 || weight.shape().n != 1 {
        return Err(Error::shape(format!(
            "response conv weight must be 1 x 2 x k x k with odd k, got {}",
            weight.shape()
        )));
    }
    let pooled = Var::concat_channels(&[x.channel_max_pool()?, x.channel_avg_pool()?])?;
    pooled.conv2d(weight, Some(bias), 1, k / 2, 1)?.sigmoid()
}

/// `1` where the response is strictly above `t`. The result is plain data:
/// it never carries gradient.
pub fn threshold_mask<T: Element>(response: &Tensor<T>, t: f64) -> Result<Vec<RegionMask>> {
    check_threshold(t)?;
    let s = response.shape();
    if s.c != 1 {
        return Err(Error::shape(format!("response map must have one channel, got {s}")));
    }
    let t = T::of(t);
    (0..s.n)
        .map(|n| {
            let bits = response.plane(n, 0).iter().map(|&v| u8::from(v > t)).collect();
            RegionMask::from_bits(s.h, s.w, bits)
        })
        .collect()
}
