//! Full-spatial baselines: instance and batch normalization.

use crate::error::{Error, Result};
use crate::tensor::{Element, Module, Parameter, Shape, Tape, Tensor, Var};

fn check_affine<T: Element>(x: Shape, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let expected = Shape::new(1, x.c, 1, 1);
    if gamma.shape() != expected || beta.shape() != expected {
        return Err(Error::shape(format!(
            "affine parameters for {x} must be {expected}, got {} and {}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Standardizes each `(sample, channel)` plane over all its pixels.
fn instance_standardize<'t, T: Element>(x: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    let xv = x.value();
    let s = xv.shape();
    let plane = s.plane() as f64;
    let mut out = Vec::with_capacity(s.numel());
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let p = xv.plane(n, c);
            let mean = p.iter().map(|v| v.f64()).sum::<f64>() / plane;
            let var = p.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / plane;
            let istd = 1.0 / (var + eps).sqrt();
            out.extend(p.iter().map(|&v| T::of((v.f64() - mean) * istd)));
            inv_std.push(T::of(istd));
        }
    }
    let y = Tensor::from_vec(s, out)?;
    let ys = y.clone();
    x.tape().push(
        "instance_norm",
        y,
        &[x],
        Box::new(move |g, _| {
            let p = s.plane();
            let inv_n = T::one() / T::of(p as f64);
            let mut gx = Vec::with_capacity(g.len());
            for (k, (gp, yp)) in g.chunks(p).zip(ys.data().chunks(p)).enumerate() {
                let mg = gp.iter().copied().sum::<T>() * inv_n;
                let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                gx.extend(gp.iter().zip(yp).map(|(&gv, &yv)| (gv - mg - yv * mgy) * inv_std[k]));
            }
            vec![Some(gx)]
        }),
    )
}

/// Instance normalization with per-channel affine `gamma`, `beta`
/// (`1 x C x 1 x 1`).
pub fn instance_norm<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    check_affine(x.shape(), &gamma.value(), &beta.value())?;
    instance_standardize(x, eps)?.mul(gamma)?.add(beta)
}

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of a batch norm layer, updated as
/// `running = (1 - momentum) * running + momentum * batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
        }
    }
}

/// Batch normalization over `(N, H, W)` for each channel.
pub fn batch_norm<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
    running: &mut RunningStats,
    mode: BnMode,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let s = xv.shape();
    check_affine(s, &gamma.value(), &beta.value())?;
    if running.mean.len() != s.c || running.var.len() != s.c {
        return Err(Error::shape(format!(
            "running statistics for {} channels, input {s}",
            running.mean.len()
        )));
    }
    let tape = x.tape();
    let normalized = match mode {
        BnMode::Eval => {
            let shape = Shape::new(1, s.c, 1, 1);
            let mean = Tensor::from_vec(shape, running.mean.iter().map(|&m| T::of(m)).collect())?;
            let istd = Tensor::from_vec(
                shape,
                running.var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect(),
            )?;
            x.sub(tape.constant(mean))?.mul(tape.constant(istd))?
        }
        BnMode::Train => {
            let (y, mean, var) = batch_standardize(x, eps)?;
            let m = running.momentum;
            for c in 0..s.c {
                running.mean[c] = (1.0 - m) * running.mean[c] + m * mean[c];
                running.var[c] = (1.0 - m) * running.var[c] + m * var[c];
            }
            y
        }
    };
    normalized.mul(gamma)?.add(beta)
}

fn batch_standardize<'t, T: Element>(x: Var<'t, T>, eps: f64) -> Result<(Var<'t, T>, Vec<f64>, Vec<f64>)> {
    let xv = x.value();
    let s = xv.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        mean[c] = (0..s.n).flat_map(|n| xv.plane(n, c)).map(|v| v.f64()).sum::<f64>() / count;
        var[c] = (0..s.n)
            .flat_map(|n| xv.plane(n, c))
            .map(|v| (v.f64() - mean[c]).powi(2))
            .sum::<f64>()
            / count;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * s.plane();
            let mu = T::of(mean[c]);
            for (o, &v) in out[off..off + s.plane()].iter_mut().zip(xv.plane(n, c)) {
                *o = (v - mu) * inv_std[c];
            }
        }
    }
    let y = Tensor::from_vec(s, out)?;
    let ys = y.clone();
    let var_node = x.tape().push(
        "batch_norm",
        y,
        &[x],
        Box::new(move |g, _| {
            let p = s.plane();
            let inv_n = T::one() / T::of((s.n * p) as f64);
            let mut mg = vec![T::zero(); s.c];
            let mut mgy = vec![T::zero(); s.c];
            for n in 0..s.n {
                for c in 0..s.c {
                    let off = (n * s.c + c) * p;
                    for i in off..off + p {
                        mg[c] = mg[c] + g[i];
                        mgy[c] = mgy[c] + g[i] * ys.data()[i];
                    }
                }
            }
            let mut gx = vec![T::zero(); g.len()];
            for n in 0..s.n {
                for c in 0..s.c {
                    let off = (n * s.c + c) * p;
                    let (a, b) = (mg[c] * inv_n, mgy[c] * inv_n);
                    for i in off..off + p {
                        gx[i] = (g[i] - a - ys.data()[i] * b) * inv_std[c];
                    }
                }
            }
            vec![Some(gx)]
        }),
    )?;
    Ok((var_node, mean, var))
}

/// Instance norm layer with learnable per-channel affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Element> InstanceNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        InstanceNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(shape)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(shape)),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        instance_norm(x, tape.param(&self.gamma), tape.param(&self.beta), eps)
    }
}

impl<T: Element> Module<T> for InstanceNorm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Batch norm layer. Running statistics are stored as non-trainable
/// parameters so checkpoints carry them.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub momentum: f64,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(shape)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(shape)),
            running_mean: Parameter::buffer(format!("{name}.running_mean"), Tensor::zeros(shape)),
            running_var: Parameter::buffer(format!("{name}.running_var"), Tensor::ones(shape)),
            momentum: 0.1,
        }
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, eps: f64, mode: BnMode) -> Result<Var<'t, T>> {
        let mut running = RunningStats {
            mean: self.running_mean.value().to_f64_vec(),
            var: self.running_var.value().to_f64_vec(),
            momentum: self.momentum,
        };
        let y = batch_norm(x, tape.param(&self.gamma), tape.param(&self.beta), eps, &mut running, mode)?;
        if mode == BnMode::Train {
            let shape = self.running_mean.value().shape();
            self.running_mean
                .set_value(Tensor::from_vec(shape, running.mean.iter().map(|&v| T::of(v)).collect())?)?;
            self.running_var
                .set_value(Tensor::from_vec(shape, running.var.iter().map(|&v| T::of(v)).collect())?)?;
        }
        Ok(y)
    }
}

impl<T: Element> Module<T> for BatchNorm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}
