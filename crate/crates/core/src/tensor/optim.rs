//! Named parameters and first-order optimizers.

use std::collections::HashMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// A named tensor owned by a model. Non-trainable parameters (running
/// statistics) are persisted in checkpoints but never updated by optimizers.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    trainable: bool,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            trainable: false,
            ..Parameter::new(name, value)
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn set_grad(&mut self, grad: Option<Tensor<T>>) {
        self.grad = grad;
    }

    /// Replaces the value, keeping the shape.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "parameter `{}` has shape {}, got {}",
                self.name,
                self.value.shape(),
                value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }
}

/// Anything that owns named parameters.
pub trait Module<T: Element> {
    fn params(&self) -> Vec<&Parameter<T>>;

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;

    /// Copies gradients of every bound parameter out of a finished backward
    /// pass; parameters that were not used get `None`.
    fn collect_grads(&mut self, grads: &super::Gradients<T>) {
        for p in self.params_mut() {
            let g = grads.param(p.name()).cloned();
            p.set_grad(g);
        }
    }
}

/// Plain stochastic gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<T: Element>(&self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        let lr = T::of(self.lr);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let Some(g) = p.grad.as_ref() else { continue };
            let next: Vec<T> = p.value.data().iter().zip(g.data()).map(|(&w, &g)| w - lr * g).collect();
            let next = Tensor::from_vec(p.value.shape(), next)?;
            next.check_finite("sgd_step")?;
            p.value = next;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// lr 1e-4 with betas (0.0, 0.9), the usual setting for GAN inpainting
    /// generators.
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (lr_t, eps) = (T::of(lr / bc1), T::of(eps));
        let inv_bc2 = T::of(1.0 / bc2);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let Some(g) = p.grad.as_ref() else { continue };
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let mut next = p.value.data().to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                next[i] = next[i] - lr_t * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
            let next = Tensor::from_vec(p.value.shape(), next)?;
            next.check_finite("adam_step")?;
            p.value = next;
        }
        Ok(())
    }
}
