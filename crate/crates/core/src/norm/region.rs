//! Region normalization: each channel is standardized separately inside the
//! known region and inside the hole.

use crate::error::{Error, Result};
use crate::masks::{self, RegionMask};
use crate::tensor::{Element, Shape, Tensor, Var};

/// The two regions a mask induces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    /// Mask value 1: uncorrupted pixels.
    Valid,
    /// Mask value 0: hole pixels.
    Hole,
}

impl Region {
    pub const ALL: [Region; 2] = [Region::Valid, Region::Hole];

    pub fn of_bit(bit: u8) -> Region {
        if bit == 1 {
            Region::Valid
        } else {
            Region::Hole
        }
    }

    pub fn index(self) -> usize {
        match self {
            Region::Valid => 0,
            Region::Hole => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMoments {
    pub mean: f64,
    /// `sqrt(var + eps)`; at least `sqrt(eps)`.
    pub std: f64,
    pub count: usize,
}

/// Per-sample, per-channel, per-region statistics of one normalization.
#[derive(Clone, Debug)]
pub struct RegionStats {
    batch: usize,
    channels: usize,
    eps: f64,
    moments: Vec<RegionMoments>,
}

impl RegionStats {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Statistics of one region; `count == 0` means the region is empty
    /// and was skipped.
    pub fn get(&self, n: usize, c: usize, region: Region) -> RegionMoments {
        self.moments[(n * self.channels + c) * 2 + region.index()]
    }
}

/// Standardizes every `(sample, channel, region)` with its own mean and
/// `sqrt(var + eps)`, then merges the regions back into one map. Masks are
/// constants for differentiation. An empty region contributes nothing.
pub fn region_normalize<'t, T: Element>(
    x: Var<'t, T>,
    masks: &[RegionMask],
    eps: f64,
) -> Result<(Var<'t, T>, RegionStats)> {
    let xv = x.value();
    let s = xv.shape();
    masks::check_batch(masks, s)?;
    if eps <= 0.0 {
        return Err(Error::Config(format!("normalization eps must be positive, got {eps}")));
    }
    let plane = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    let mut moments = Vec::with_capacity(s.n * s.c * 2);
    // inverse std per (n, c, region), reused by the backward pass
    let mut inv_std = Vec::with_capacity(s.n * s.c * 2);
    for n in 0..s.n {
        let bits = masks::for_sample(masks, n).bits();
        for c in 0..s.c {
            let src = xv.plane(n, c);
            let mut sum = [0.0f64; 2];
            let mut count = [0usize; 2];
            for (&v, &b) in src.iter().zip(bits) {
                let k = Region::of_bit(b).index();
                sum[k] += v.f64();
                count[k] += 1;
            }
            let mean = [0, 1].map(|k| if count[k] > 0 { sum[k] / count[k] as f64 } else { 0.0 });
            let mut sq = [0.0f64; 2];
            for (&v, &b) in src.iter().zip(bits) {
                let k = Region::of_bit(b).index();
                let d = v.f64() - mean[k];
                sq[k] += d * d;
            }
            let mut istd = [T::zero(); 2];
            let mut mu = [T::zero(); 2];
            for k in 0..2 {
                let var = if count[k] > 0 { sq[k] / count[k] as f64 } else { 0.0 };
                let std = (var + eps).sqrt();
                moments.push(RegionMoments {
                    mean: mean[k],
                    std,
                    count: count[k],
                });
                istd[k] = T::of(1.0 / std);
                mu[k] = T::of(mean[k]);
                inv_std.push(istd[k]);
            }
            let dst = &mut out[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
            for ((o, &v), &b) in dst.iter_mut().zip(src).zip(bits) {
                let k = Region::of_bit(b).index();
                *o = (v - mu[k]) * istd[k];
            }
        }
    }
    let y = Tensor::from_vec(s, out)?;
    let y_saved = y.clone();
    let owned = masks.to_vec();
    let var = x.tape().push(
        "region_normalize",
        y,
        &[x],
        Box::new(move |g, _| {
            // dx = (g - mean_R(g) - y * mean_R(g * y)) / sigma, per region.
            let mut gx = vec![T::zero(); s.numel()];
            let yd = y_saved.data();
            for n in 0..s.n {
                let bits = masks::for_sample(&owned, n).bits();
                for c in 0..s.c {
                    let off = (n * s.c + c) * plane;
                    let (gp, yp) = (&g[off..off + plane], &yd[off..off + plane]);
                    let mut sum_g = [T::zero(); 2];
                    let mut sum_gy = [T::zero(); 2];
                    let mut count = [0usize; 2];
                    for ((&gv, &yv), &b) in gp.iter().zip(yp).zip(bits) {
                        let k = Region::of_bit(b).index();
                        sum_g[k] = sum_g[k] + gv;
                        sum_gy[k] = sum_gy[k] + gv * yv;
                        count[k] += 1;
                    }
                    let mean = |acc: [T; 2], k: usize| {
                        if count[k] > 0 {
                            acc[k] / T::of(count[k] as f64)
                        } else {
                            T::zero()
                        }
                    };
                    let mg = [mean(sum_g, 0), mean(sum_g, 1)];
                    let mgy = [mean(sum_gy, 0), mean(sum_gy, 1)];
                    let istd = &inv_std[(n * s.c + c) * 2..(n * s.c + c) * 2 + 2];
                    for (i, &b) in bits.iter().enumerate() {
                        let k = Region::of_bit(b).index();
                        gx[off + i] = (gp[i] - mg[k] - yp[i] * mgy[k]) * istd[k];
                    }
                }
            }
            vec![Some(gx)]
        }),
    )?;
    Ok((
        var,
        RegionStats {
            batch: s.n,
            channels: s.c,
            eps,
            moments,
        },
    ))
}

/// Per-region, per-channel affine transform: pixels of region `k` in
/// channel `c` become `gamma[k, c] * x + beta[k, c]`. `gamma` and `beta` are
/// shaped `2 x C x 1 x 1` (row 0: valid region, row 1: hole).
pub fn region_affine<'t, T: Element>(
    x: Var<'t, T>,
    masks: &[RegionMask],
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (gv, bv) = (gamma.value(), beta.value());
    let s = xv.shape();
    masks::check_batch(masks, s)?;
    let expected = Shape::new(2, s.c, 1, 1);
    if gv.shape() != expected || bv.shape() != expected {
        return Err(Error::shape(format!(
            "region affine parameters must be {expected}, got {} and {}",
            gv.shape(),
            bv.shape()
        )));
    }
    let plane = s.plane();
    let c_total = s.c;
    let coef = move |k: usize, c: usize| k * c_total + c;
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let bits = masks::for_sample(masks, n).bits();
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            for (i, &b) in bits.iter().enumerate() {
                let k = Region::of_bit(b).index();
                out[off + i] = gv.data()[coef(k, c)] * xv.data()[off + i] + bv.data()[coef(k, c)];
            }
        }
    }
    let owned = masks.to_vec();
    x.tape().push(
        "region_affine",
        Tensor::from_vec(s, out)?,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let mut gx = vec![T::zero(); s.numel()];
            let mut gg = vec![T::zero(); 2 * s.c];
            let mut gb = vec![T::zero(); 2 * s.c];
            for n in 0..s.n {
                let bits = masks::for_sample(&owned, n).bits();
                for c in 0..s.c {
                    let off = (n * s.c + c) * plane;
                    for (i, &b) in bits.iter().enumerate() {
                        let j = coef(Region::of_bit(b).index(), c);
                        let gi = g[off + i];
                        gx[off + i] = gi * gv.data()[j];
                        gg[j] = gg[j] + gi * xv.data()[off + i];
                        gb[j] = gb[j] + gi;
                    }
                }
            }
            vec![needs[0].then_some(gx), needs[1].then_some(gg), needs[2].then_some(gb)]
        }),
    )
}
