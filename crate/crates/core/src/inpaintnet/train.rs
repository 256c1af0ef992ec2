//! Losses and the alternating discriminator / generator update.

use std::fmt;
use std::str::FromStr;

use super::generator::{Discriminator, Generator};
use crate::error::{Error, Result};
use crate::masks::RegionMask;
use crate::tensor::{Adam, AdamConfig, Element, Module, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvKind {
    Hinge,
    NonSaturating,
}

impl fmt::Display for AdvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvKind::Hinge => "hinge",
            AdvKind::NonSaturating => "nonsaturating",
        })
    }
}

impl FromStr for AdvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hinge" => Ok(AdvKind::Hinge),
            "nonsaturating" | "non-saturating" | "ns" => Ok(AdvKind::NonSaturating),
            _ => Err(Error::Config(format!("unknown adversarial loss `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub l1_weight: f64,
    pub adv_weight: f64,
    pub adv_kind: AdvKind,
}

impl Default for LossBundle {
    fn default() -> Self {
        LossBundle {
            l1_weight: 1.0,
            adv_weight: 0.1,
            adv_kind: AdvKind::Hinge,
        }
    }
}

impl LossBundle {
    pub fn l1_only() -> Self {
        LossBundle {
            adv_weight: 0.0,
            ..LossBundle::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0 && self.adv_weight >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got l1={} adv={}",
                self.l1_weight, self.adv_weight
            )));
        }
        Ok(())
    }

    pub fn uses_discriminator(&self) -> bool {
        self.adv_weight > 0.0
    }
}

/// Critic loss on real and fake score maps.
pub fn discriminator_loss<'t, T: Element>(kind: AdvKind, real: Var<'t, T>, fake: Var<'t, T>) -> Result<Var<'t, T>> {
    match kind {
        // mean(relu(1 - real)) + mean(relu(1 + fake))
        AdvKind::Hinge => real
            .neg()?
            .add_scalar(1.0)?
            .relu()?
            .mean()?
            .add(fake.add_scalar(1.0)?.relu()?.mean()?),
        // mean(softplus(-real)) + mean(softplus(fake))
        AdvKind::NonSaturating => real.neg()?.softplus()?.mean()?.add(fake.softplus()?.mean()?),
    }
}

/// Generator's adversarial term on the fake score map.
pub fn generator_adv_loss<'t, T: Element>(kind: AdvKind, fake: Var<'t, T>) -> Result<Var<'t, T>> {
    match kind {
        AdvKind::Hinge => fake.mean()?.neg(),
        AdvKind::NonSaturating => fake.neg()?.softplus()?.mean(),
    }
}

/// Scalar logs of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub iteration: u64,
    pub loss_g: f64,
    pub loss_l1: f64,
    pub loss_adv: f64,
    /// `None` when the discriminator is disabled.
    pub loss_d: Option<f64>,
}

pub struct Trainer<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub losses: LossBundle,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
    iteration: u64,
}

impl<T: Element> Trainer<T> {
    pub fn new(
        generator: Generator<T>,
        discriminator: Discriminator<T>,
        losses: LossBundle,
        optim: AdamConfig,
    ) -> Result<Self> {
        losses.validate()?;
        if !losses.uses_discriminator() {
            log::info!("adversarial weight is 0; discriminator updates are skipped");
        }
        Ok(Trainer {
            generator,
            discriminator,
            losses,
            opt_g: Adam::new(optim),
            opt_d: Adam::new(optim),
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Critic loss on `real` vs. a fixed `fake` batch, without updating.
    pub fn discriminator_loss_value(&self, real: &Tensor<T>, fake: &Tensor<T>) -> Result<f64> {
        let tape = Tape::new();
        let r = self.discriminator.forward(&tape, tape.constant(real.clone()))?;
        let f = self.discriminator.forward(&tape, tape.constant(fake.clone()))?;
        Ok(discriminator_loss(self.losses.adv_kind, r, f)?.value().item().f64())
    }

    /// One critic update on `real` vs. a fixed `fake` batch.
    pub fn discriminator_step(&mut self, real: &Tensor<T>, fake: &Tensor<T>) -> Result<f64> {
        let tape = Tape::new();
        let r = self.discriminator.forward(&tape, tape.constant(real.clone()))?;
        let f = self.discriminator.forward(&tape, tape.constant(fake.clone()))?;
        let loss = discriminator_loss(self.losses.adv_kind, r, f)?;
        let grads = tape.backward(loss)?;
        self.discriminator.collect_grads(&grads);
        self.opt_d.step(&mut self.discriminator.params_mut())?;
        Ok(loss.value().item().f64())
    }

    /// A critic update (when enabled) followed by a generator update.
    /// Any numeric failure is reported with the iteration index.
    pub fn train_step(&mut self, images: &Tensor<T>, masks: &[RegionMask]) -> Result<StepLog> {
        let iteration = self.iteration;
        let log = self.step_inner(images, masks).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                iteration,
                source: Box::new(e),
            },
            other => other,
        })?;
        self.iteration += 1;
        Ok(log)
    }

    fn step_inner(&mut self, images: &Tensor<T>, masks: &[RegionMask]) -> Result<StepLog> {
        let tape = Tape::new();
        let out = self.generator.forward(&tape, images, masks, true)?;
        let target = tape.constant(images.clone());
        let l1 = out.completed.l1_loss(target)?;
        let composite = out.completed.composite_with(images, masks)?;

        let mut loss_d = None;
        let mut loss = l1.scale(self.losses.l1_weight)?;
        let mut loss_adv = 0.0;
        if self.losses.uses_discriminator() {
            loss_d = Some(self.discriminator_step(images, &composite.value())?);
            let fake = self.discriminator.forward(&tape, composite)?;
            let adv = generator_adv_loss(self.losses.adv_kind, fake)?;
            loss_adv = adv.value().item().f64();
            loss = loss.add(adv.scale(self.losses.adv_weight)?)?;
        }
        let grads = tape.backward(loss)?;
        self.generator.collect_grads(&grads);
        self.opt_g.step(&mut self.generator.params_mut())?;
        Ok(StepLog {
            iteration: self.iteration,
            loss_g: loss.value().item().f64(),
            loss_l1: l1.value().item().f64(),
            loss_adv,
            loss_d,
        })
    }
}
