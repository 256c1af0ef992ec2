//! Normalization layers.
//!
//! [`region_normalize`] is the core: statistics are computed per region of
//! a binary mask rather than over the whole plane. [`RnB`] takes the region
//! mask from the inpainting mask; [`RnL`] derives it from the features.
//! Instance and batch norm are the full-spatial baselines, and
//! [`shift_report`] quantifies why they misbehave on hole-filled inputs.

pub mod baseline;
mod region;
mod rnb;
mod rnl;
mod shift;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use baseline::{batch_norm, instance_norm, BatchNorm, BnMode, InstanceNorm, RunningStats};
pub use region::{region_affine, region_normalize, Region, RegionMoments, RegionStats};
pub use rnb::{rn_b_forward, RnB};
pub use rnl::{rn_l_forward, spatial_response, threshold_mask, RnL, RnlDiagnostics, RnlWeights, DEFAULT_THRESHOLD};
pub use shift::{shift_report, ShiftReport};

use crate::error::{Error, Result};
use crate::masks::RegionMask;
use crate::tensor::{Element, Module, Parameter, Tape, Var};

/// Added to the variance inside the square root.
pub const DEFAULT_EPS: f64 = 1e-5;

/// The normalization that fills a slot of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    RnB,
    RnL,
    In,
    Bn,
    None,
}

impl NormKind {
    pub const ALL: [NormKind; 5] = [NormKind::RnB, NormKind::RnL, NormKind::In, NormKind::Bn, NormKind::None];

    pub fn label(self) -> &'static str {
        match self {
            NormKind::RnB => "RN-B",
            NormKind::RnL => "RN-L",
            NormKind::In => "IN",
            NormKind::Bn => "BN",
            NormKind::None => "None",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "rn-b" | "rnb" => Ok(NormKind::RnB),
            "rn-l" | "rnl" => Ok(NormKind::RnL),
            "in" => Ok(NormKind::In),
            "bn" => Ok(NormKind::Bn),
            "none" => Ok(NormKind::None),
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

/// Per-call inputs shared by every normalization slot.
#[derive(Clone, Copy, Debug)]
pub struct NormContext<'a> {
    /// Inpainting mask at this layer's resolution (RN-B only).
    pub masks: Option<&'a [RegionMask]>,
    pub train: bool,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub enum NormLayer<T> {
    RnB(RnB<T>),
    RnL(RnL<T>),
    In(InstanceNorm<T>),
    Bn(BatchNorm<T>),
    Identity,
}

impl<T: Element> NormLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        kind: NormKind,
        name: &str,
        channels: usize,
        rnl_threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            NormKind::RnB => NormLayer::RnB(RnB::new(name, channels)),
            NormKind::RnL => NormLayer::RnL(RnL::new(name, rnl_threshold, rng)?),
            NormKind::In => NormLayer::In(InstanceNorm::new(name, channels)),
            NormKind::Bn => NormLayer::Bn(BatchNorm::new(name, channels)),
            NormKind::None => NormLayer::Identity,
        })
    }

    pub fn kind(&self) -> NormKind {
        match self {
            NormLayer::RnB(_) => NormKind::RnB,
            NormLayer::RnL(_) => NormKind::RnL,
            NormLayer::In(_) => NormKind::In,
            NormLayer::Bn(_) => NormKind::Bn,
            NormLayer::Identity => NormKind::None,
        }
    }

    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        ctx: NormContext<'_>,
    ) -> Result<(Var<'t, T>, Option<RnlDiagnostics<T>>)> {
        match self {
            NormLayer::RnB(layer) => {
                let masks = ctx
                    .masks
                    .ok_or_else(|| Error::Config("RN-B layer called without a region mask".into()))?;
                Ok((layer.forward(tape, x, masks, ctx.eps)?, None))
            }
            NormLayer::RnL(layer) => {
                let (y, diag) = layer.forward(tape, x, ctx.train, ctx.eps)?;
                Ok((y, Some(diag)))
            }
            NormLayer::In(layer) => Ok((layer.forward(tape, x, ctx.eps)?, None)),
            NormLayer::Bn(layer) => {
                let mode = if ctx.train { BnMode::Train } else { BnMode::Eval };
                Ok((layer.forward(tape, x, ctx.eps, mode)?, None))
            }
            NormLayer::Identity => Ok((x, None)),
        }
    }
}

impl<T: Element> Module<T> for NormLayer<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        match self {
            NormLayer::RnB(l) => l.params(),
            NormLayer::RnL(l) => l.params(),
            NormLayer::In(l) => l.params(),
            NormLayer::Bn(l) => l.params(),
            NormLayer::Identity => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            NormLayer::RnB(l) => l.params_mut(),
            NormLayer::RnL(l) => l.params_mut(),
            NormLayer::In(l) => l.params_mut(),
            NormLayer::Bn(l) => l.params_mut(),
            NormLayer::Identity => Vec::new(),
        }
    }
}
