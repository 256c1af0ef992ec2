//! Basic region normalization: regions come from the external inpainting
//! mask, each region has its own per-channel affine parameters.

use super::region::{region_affine, region_normalize};
use crate::error::Result;
use crate::masks::RegionMask;
use crate::tensor::{Element, Module, Parameter, Shape, Tape, Tensor, Var};

/// Learnable `gamma`, `beta` shaped `2 x C x 1 x 1`; row 0 is the valid
/// region, row 1 the hole.
#[derive(Clone, Debug)]
pub struct RnB<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Element> RnB<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let shape = Shape::new(2, channels, 1, 1);
        RnB {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(shape)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(shape)),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        masks: &[RegionMask],
        eps: f64,
    ) -> Result<Var<'t, T>> {
        rn_b_forward(x, masks, tape.param(&self.gamma), tape.param(&self.beta), eps)
    }
}

impl<T: Element> Module<T> for RnB<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Region normalization followed by the per-region affine transform.
pub fn rn_b_forward<'t, T: Element>(
    x: Var<'t, T>,
    masks: &[RegionMask],
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let (normalized, _) = region_normalize(x, masks, eps)?;
    region_affine(normalized, masks, gamma, beta)
}
