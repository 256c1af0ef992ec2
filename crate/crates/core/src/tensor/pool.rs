//! Pooling across the channel axis (per pixel).

use super::{Element, Shape, Tensor, Var};
use crate::error::{Error, Result};

impl<'t, T: Element> Var<'t, T> {
    /// Per-pixel maximum over channels, `N x 1 x H x W`. The gradient goes
    /// to the lowest channel index attaining the maximum.
    pub fn channel_max_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape();
        if s.c == 0 {
            return Err(Error::shape("channel pooling needs at least one channel"));
        }
        let plane = s.plane();
        let out_shape = Shape::new(s.n, 1, s.h, s.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        let d = x.data();
        for n in 0..s.n {
            let base = n * s.c * plane;
            for p in 0..plane {
                let mut best = 0;
                let mut val = d[base + p];
                for c in 1..s.c {
                    let v = d[base + c * plane + p];
                    if v > val {
                        val = v;
                        best = c;
                    }
                }
                out.push(val);
                argmax.push(base + best * plane + p);
            }
        }
        let len = x.numel();
        self.tape().push(
            "channel_max_pool",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); len];
                for (&i, &gv) in argmax.iter().zip(g) {
                    gx[i] = gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Per-pixel mean over channels, `N x 1 x H x W`.
    pub fn channel_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape();
        if s.c == 0 {
            return Err(Error::shape("channel pooling needs at least one channel"));
        }
        let plane = s.plane();
        let inv = T::one() / T::of(s.c as f64);
        let out_shape = Shape::new(s.n, 1, s.h, s.w);
        let mut out = vec![T::zero(); out_shape.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = x.plane(n, c);
                let dst = &mut out[n * plane..(n + 1) * plane];
                dst.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.tape().push(
            "channel_avg_pool",
            Tensor::from_vec(out_shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(s.numel());
                for n in 0..s.n {
                    for _ in 0..s.c {
                        gx.extend(g[n * plane..(n + 1) * plane].iter().map(|&v| v * inv));
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
