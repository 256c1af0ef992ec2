//! Population moments over the pixels a mask selects.

use super::{Element, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::masks::{self, RegionMask};

/// Which side of a [`RegionMask`] to aggregate over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionSelector {
    /// Pixels where the mask is 1 (known pixels).
    Inside,
    /// Pixels where the mask is 0 (hole).
    Outside,
}

impl RegionSelector {
    pub fn bit(self) -> u8 {
        match self {
            RegionSelector::Inside => 1,
            RegionSelector::Outside => 0,
        }
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Mean and population variance of every channel over the selected
    /// region, each shaped `N x C x 1 x 1`.
    ///
    /// Returns [`Error::EmptyRegion`] if any sample selects no pixel.
    pub fn masked_moments(
        self,
        masks: &[RegionMask],
        selector: RegionSelector,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let x = self.value();
        let s = x.shape();
        masks::check_batch(masks, s)?;
        let bit = selector.bit();
        let plane = s.plane();
        let counts: Vec<usize> = (0..s.n)
            .map(|n| masks::for_sample(masks, n).bits().iter().filter(|&&b| b == bit).count())
            .collect();
        if counts.contains(&0) {
            return Err(Error::EmptyRegion);
        }
        let stat_shape = Shape::new(s.n, s.c, 1, 1);
        let mut means = Vec::with_capacity(s.n * s.c);
        let mut vars = Vec::with_capacity(s.n * s.c);
        for n in 0..s.n {
            let bits = masks::for_sample(masks, n).bits();
            let inv = T::one() / T::of(counts[n] as f64);
            for c in 0..s.c {
                let p = x.plane(n, c);
                let sel = || p.iter().zip(bits).filter(|(_, &b)| b == bit).map(|(&v, _)| v);
                let mu = sel().sum::<T>() * inv;
                let var = sel().map(|v| (v - mu) * (v - mu)).sum::<T>() * inv;
                means.push(mu);
                vars.push(var);
            }
        }

        let owned = masks.to_vec();
        let counts_m = counts.clone();
        let mean = self.tape().push(
            "masked_mean",
            Tensor::from_vec(stat_shape, means.clone())?,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    let bits = masks::for_sample(&owned, n).bits();
                    let inv = T::one() / T::of(counts_m[n] as f64);
                    for c in 0..s.c {
                        let gv = g[n * s.c + c] * inv;
                        let dst = &mut gx[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
                        for (d, &b) in dst.iter_mut().zip(bits) {
                            if b == bit {
                                *d = gv;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )?;

        let owned = masks.to_vec();
        let var = self.tape().push(
            "masked_var",
            Tensor::from_vec(stat_shape, vars)?,
            &[self],
            Box::new(move |g, _| {
                // d var / d x_i = 2 (x_i - mu) / |R|; the mean's own dependence cancels.
                let mut gx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    let bits = masks::for_sample(&owned, n).bits();
                    let scale = T::of(2.0) / T::of(counts[n] as f64);
                    for c in 0..s.c {
                        let k = n * s.c + c;
                        let mu = means[k];
                        let src = x.plane(n, c);
                        let dst = &mut gx[k * plane..(k + 1) * plane];
                        for ((d, &v), &b) in dst.iter_mut().zip(src).zip(bits) {
                            if b == bit {
                                *d = g[k] * scale * (v - mu);
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )?;
        Ok((mean, var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    fn moments(values: &[f64], bits: &[u8], sel: RegionSelector) -> Result<(f64, f64)> {
        let tape = Tape::new();
        let mask = RegionMask::from_bits(1, bits.len(), bits.to_vec()).unwrap();
        let (m, v) = tape.constant(row(values)).masked_moments(&[mask], sel)?;
        Ok((m.value().item(), v.value().item()))
    }

    #[test]
    fn constant_region() {
        assert_eq!(moments(&[4.0, 4.0, 4.0], &[1, 1, 1], RegionSelector::Inside).unwrap(), (4.0, 0.0));
    }

    #[test]
    fn excluded_pixels_are_ignored() {
        let r = moments(&[0.0, 0.0, 0.0, 255.0], &[1, 1, 1, 0], RegionSelector::Inside).unwrap();
        assert_eq!(r, (0.0, 0.0));
        let r = moments(&[0.0, 0.0, 0.0, 255.0], &[1, 1, 1, 0], RegionSelector::Outside).unwrap();
        assert_eq!(r, (255.0, 0.0));
    }

    #[test]
    fn one_three_five_seven() {
        let r = moments(&[1.0, 3.0, 5.0, 7.0], &[0, 0, 0, 0], RegionSelector::Outside).unwrap();
        assert_eq!(r, (4.0, 5.0));
    }

    #[test]
    fn empty_region_is_signalled() {
        let r = moments(&[1.0, 2.0], &[1, 1], RegionSelector::Outside);
        assert!(matches!(r, Err(Error::EmptyRegion)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(Shape::new(2, 2, 3, 3), 1.0, &mut rng);
        let m0 = RegionMask::from_bits(3, 3, vec![1, 0, 1, 1, 0, 0, 1, 1, 0]).unwrap();
        let m1 = RegionMask::from_bits(3, 3, vec![0, 0, 1, 1, 1, 1, 0, 1, 0]).unwrap();
        let masks = [m0, m1];
        for sel in [RegionSelector::Inside, RegionSelector::Outside] {
            let report = check_gradients(std::slice::from_ref(&x), GradCheckConfig::default(), |tape, v| {
                let (m, var) = v[0].masked_moments(&masks, sel)?;
                let w = tape.constant(Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, -2.0, 0.5, 3.0])?);
                m.mul(w)?.add(var)?.sum()
            })
            .unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }
}
