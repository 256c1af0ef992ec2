//! Elementwise, broadcasting and reduction operations.

use super::{Element, Shape, Tensor, Var};
use crate::error::{Error, Result};
use crate::masks::{self, RegionMask};

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for (i, (x, y)) in a.dims().into_iter().zip(b.dims()).enumerate() {
        out[i] = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a} with {b}"))),
        };
    }
    Ok(Shape::from_dims(out))
}

/// Element strides of `s` when indexed with coordinates of `out`; broadcast
/// axes get stride 0.
fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let d = s.dims();
    let full = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let o = out.dims();
    let mut st = [0; 4];
    for i in 0..4 {
        st[i] = if d[i] == 1 && o[i] != 1 { 0 } else { full[i] };
    }
    st
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(out: Shape, sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut o = 0;
    for n in 0..out.n {
        for c in 0..out.c {
            for h in 0..out.h {
                let base_a = n * sa[0] + c * sa[1] + h * sa[2];
                let base_b = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out.w {
                    f(o, base_a + w * sa[3], base_b + w * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

type BinFn<T> = fn(T, T) -> T;

// Fallible arithmetic, so these stay inherent methods rather than `std::ops` impls.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Element> Var<'t, T> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.map(f);
        let y_saved = y.clone();
        self.tape().push(
            op,
            y,
            &[self],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(y_saved.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: BinFn<T>,
        da: BinFn<T>,
        db: BinFn<T>,
    ) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        let y = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(out_shape, data)?
        } else {
            let (sa, sb) = (
                broadcast_strides(a.shape(), out_shape),
                broadcast_strides(b.shape(), out_shape),
            );
            let mut data = vec![T::zero(); out_shape.numel()];
            let (ad, bd) = (a.data(), b.data());
            for_each_broadcast(out_shape, sa, sb, |o, i, j| data[o] = f(ad[i], bd[j]));
            Tensor::from_vec(out_shape, data)?
        };
        self.tape().push(
            op,
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let (ad, bd) = (a.data(), b.data());
                if a.shape() == b.shape() {
                    let ga = needs[0].then(|| {
                        g.iter()
                            .zip(ad.iter().zip(bd))
                            .map(|(&g, (&x, &y))| g * da(x, y))
                            .collect()
                    });
                    let gb = needs[1].then(|| {
                        g.iter()
                            .zip(ad.iter().zip(bd))
                            .map(|(&g, (&x, &y))| g * db(x, y))
                            .collect()
                    });
                    return vec![ga, gb];
                }
                let sa = broadcast_strides(a.shape(), out_shape);
                let sb = broadcast_strides(b.shape(), out_shape);
                let mut ga = vec![T::zero(); ad.len()];
                let mut gb = vec![T::zero(); bd.len()];
                for_each_broadcast(out_shape, sa, sb, |o, i, j| {
                    ga[i] = ga[i] + g[o] * da(ad[i], bd[j]);
                    gb[j] = gb[j] + g[o] * db(ad[i], bd[j]);
                });
                vec![needs[0].then_some(ga), needs[1].then_some(gb)]
            }),
        )
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t, T>> {
        let s = T::of(s);
        self.unary("scale", move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t, T>> {
        let s = T::of(s);
        self.unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t, T>> {
        let s = T::of(slope);
        self.unary(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'t, T>> {
        self.unary(
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        let total = x.data().iter().copied().sum::<T>();
        self.tape().push(
            "sum",
            Tensor::scalar(total),
            &[self],
            Box::new(move |g, _| vec![Some(vec![g[0]; shape.numel()])]),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.shape().numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Mean absolute difference.
    pub fn l1_loss(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.sub(target)?.abs()?.mean()
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let values: Vec<Tensor<T>> = parts.iter().map(Var::value).collect();
        let s0 = values[0].shape();
        for v in &values {
            let s = v.shape();
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape(format!("cannot concat {s} with {s0}")));
            }
        }
        let channels: Vec<usize> = values.iter().map(|v| v.shape().c).collect();
        let total_c: usize = channels.iter().sum();
        let plane = s0.plane();
        let out_shape = Shape::new(s0.n, total_c, s0.h, s0.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for v in &values {
                let len = v.shape().c * plane;
                data.extend_from_slice(&v.data()[n * len..(n + 1) * len]);
            }
        }
        let y = Tensor::from_vec(out_shape, data)?;
        first.tape().push(
            "concat_channels",
            y,
            parts,
            Box::new(move |g, needs| {
                let mut out: Vec<Option<Vec<T>>> = channels
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| need.then(|| Vec::with_capacity(s0.n * c * plane)))
                    .collect();
                let mut off = 0;
                for _ in 0..s0.n {
                    for (slot, &c) in out.iter_mut().zip(&channels) {
                        let len = c * plane;
                        if let Some(buf) = slot {
                            buf.extend_from_slice(&g[off..off + len]);
                        }
                        off += len;
                    }
                }
                out
            }),
        )
    }

    /// Keeps `original` where the mask is 1 and `self` where it is 0.
    /// Known pixels are copied, not recomputed, so they stay bit-identical.
    pub fn composite_with(self, original: &Tensor<T>, masks: &[RegionMask]) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if original.shape() != shape {
            return Err(Error::shape(format!(
                "composite of {shape} with original {}",
                original.shape()
            )));
        }
        masks::check_batch(masks, shape)?;
        let plane = shape.plane();
        let keep = |i: usize| {
            let n = i / (shape.c * plane);
            masks::for_sample(masks, n).bits()[i % plane] == 1
        };
        let data = (0..shape.numel())
            .map(|i| if keep(i) { original.data()[i] } else { x.data()[i] })
            .collect();
        let masks = masks.to_vec();
        self.tape().push(
            "composite",
            Tensor::from_vec(shape, data)?,
            &[self],
            Box::new(move |g, _| {
                let gx = (0..g.len())
                    .map(|i| {
                        let n = i / (shape.c * plane);
                        if masks::for_sample(&masks, n).bits()[i % plane] == 1 {
                            T::zero()
                        } else {
                            g[i]
                        }
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
