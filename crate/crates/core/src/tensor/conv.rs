//! 2-D convolution and transposed convolution via im2col + GEMM.

use super::{matmul, Element, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// Geometry of one im2col unfolding: a `channels x height x width` image
/// unfolded into a `(channels * kh * kw) x (out_h * out_w)` column matrix.
#[derive(Clone, Copy, Debug)]
struct Unfold {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
    out_h: usize,
    out_w: usize,
}

impl Unfold {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..limit`,
    /// and the input coordinate of output position 0 (may be negative).
    #[inline]
    fn valid_range(&self, k: usize, out: usize, limit: usize) -> (usize, usize, isize) {
        let off = (k * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
        let last = limit as isize - 1 - off;
        let hi = if last < 0 { 0 } else { ((last / s) as usize + 1).min(out) };
        (lo.min(hi), hi, off)
    }

    fn im2col<T: Element>(&self, img: &[T], col: &mut [T]) {
        let cols = self.cols();
        let plane_len = self.height * self.width;
        let mut row = 0;
        for plane in img.chunks_exact(plane_len).take(self.channels) {
            for ki in 0..self.kh {
                let (ylo, yhi, yoff) = self.valid_range(ki, self.out_h, self.height);
                for kj in 0..self.kw {
                    let (xlo, xhi, xoff) = self.valid_range(kj, self.out_w, self.width);
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    dst[..ylo * self.out_w].fill(T::zero());
                    dst[yhi * self.out_w..].fill(T::zero());
                    for oy in ylo..yhi {
                        let iy = (oy * self.stride) as isize + yoff;
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        line[..xlo].fill(T::zero());
                        line[xhi..].fill(T::zero());
                        let x0 = (xlo * self.stride) as isize + xoff;
                        if self.stride == 1 {
                            let x0 = x0 as usize;
                            line[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                        } else {
                            for (v, ix) in line[xlo..xhi].iter_mut().zip((x0 as usize..).step_by(self.stride)) {
                                *v = src[ix];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters columns back, accumulating into `img`.
    fn col2im<T: Element>(&self, col: &[T], img: &mut [T]) {
        let cols = self.cols();
        let plane_len = self.height * self.width;
        let mut row = 0;
        for plane in img.chunks_exact_mut(plane_len).take(self.channels) {
            for ki in 0..self.kh {
                let (ylo, yhi, yoff) = self.valid_range(ki, self.out_h, self.height);
                for kj in 0..self.kw {
                    let (xlo, xhi, xoff) = self.valid_range(kj, self.out_w, self.width);
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in ylo..yhi {
                        let iy = ((oy * self.stride) as isize + yoff) as usize;
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        let line = &src[oy * self.out_w + xlo..oy * self.out_w + xhi];
                        let x0 = ((xlo * self.stride) as isize + xoff) as usize;
                        if self.stride == 1 {
                            for (d, &v) in dst[x0..x0 + line.len()].iter_mut().zip(line) {
                                *d = *d + v;
                            }
                        } else {
                            for (&v, ix) in line.iter().zip((x0..).step_by(self.stride)) {
                                dst[ix] = dst[ix] + v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Element>(g: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        gb[i % channels] = gb[i % channels] + chunk.iter().copied().sum::<T>();
    }
    gb
}

fn check_bias(bias: Option<&Tensor<impl Element>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != channels => Err(Error::shape(format!(
            "bias of shape {} for {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

impl<'t, T: Element> Var<'t, T> {
    /// Cross-correlation with weight `cout x cin x kh x kw`.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let (xs, ws) = (x.shape(), w.shape());
        if ws.c != xs.c {
            return Err(Error::shape(format!("conv2d input {xs} with weight {ws}")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::shape("conv2d stride and dilation must be positive"));
        }
        check_bias(b.as_ref(), ws.n)?;
        let span_h = dilation * (ws.h - 1) + 1;
        let span_w = dilation * (ws.w - 1) + 1;
        if xs.h + 2 * padding < span_h || xs.w + 2 * padding < span_w {
            return Err(Error::shape(format!(
                "conv2d kernel {}x{} (dilation {dilation}) does not fit input {xs} with padding {padding}",
                ws.h, ws.w
            )));
        }
        let geom = Unfold {
            channels: xs.c,
            height: xs.h,
            width: xs.w,
            kh: ws.h,
            kw: ws.w,
            stride,
            padding,
            dilation,
            out_h: (xs.h + 2 * padding - span_h) / stride + 1,
            out_w: (xs.w + 2 * padding - span_w) / stride + 1,
        };
        let out_shape = Shape::new(xs.n, ws.n, geom.out_h, geom.out_w);
        let (k, cols, cout) = (geom.rows(), geom.cols(), ws.n);
        let in_len = xs.c * xs.plane();
        let out_len = cout * cols;

        let mut out = vec![T::zero(); out_shape.numel()];
        // Unfolded input, kept for the weight gradient.
        let mut cols_all = vec![T::zero(); xs.n * k * cols];
        for (n, col) in cols_all.chunks_exact_mut(k * cols).enumerate() {
            geom.im2col(&x.data()[n * in_len..(n + 1) * in_len], col);
            matmul(false, false, cout, cols, k, w.data(), col, &mut out[n * out_len..(n + 1) * out_len], false);
        }
        if let Some(b) = &b {
            add_bias(&mut out, b.data(), cols);
        }

        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().push(
            "conv2d",
            Tensor::from_vec(out_shape, out)?,
            &parents,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut gw = needs[1].then(|| vec![T::zero(); w.numel()]);
                let mut col = vec![T::zero(); if needs[0] { k * cols } else { 0 }];
                for n in 0..xs.n {
                    let gn = &g[n * out_len..(n + 1) * out_len];
                    if let Some(gw) = gw.as_mut() {
                        matmul(false, true, cout, k, cols, gn, &cols_all[n * k * cols..(n + 1) * k * cols], gw, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        matmul(true, false, k, cols, cout, w.data(), gn, &mut col, false);
                        geom.col2im(&col, &mut gx[n * in_len..(n + 1) * in_len]);
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, cout, cols)));
                }
                grads
            }),
        )
    }

    /// Transposed convolution (the adjoint of [`Var::conv2d`] with the same
    /// stride and padding) with weight `cin x cout x kh x kw`. Output size is
    /// `(h - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let (xs, ws) = (x.shape(), w.shape());
        if ws.n != xs.c {
            return Err(Error::shape(format!("conv_transpose2d input {xs} with weight {ws}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv_transpose2d stride must be positive"));
        }
        let cout = ws.c;
        check_bias(b.as_ref(), cout)?;
        let out_h = ((xs.h - 1) * stride + ws.h).checked_sub(2 * padding).filter(|&v| v > 0);
        let out_w = ((xs.w - 1) * stride + ws.w).checked_sub(2 * padding).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape(format!(
                "conv_transpose2d padding {padding} too large for input {xs} and kernel {ws}"
            )));
        };
        // The matching forward convolution maps out_h x out_w back to h x w.
        let geom = Unfold {
            channels: cout,
            height: out_h,
            width: out_w,
            kh: ws.h,
            kw: ws.w,
            stride,
            padding,
            dilation: 1,
            out_h: xs.h,
            out_w: xs.w,
        };
        let out_shape = Shape::new(xs.n, cout, out_h, out_w);
        let (k, cols, cin) = (geom.rows(), geom.cols(), xs.c);
        let in_len = cin * cols;
        let out_len = cout * out_h * out_w;

        let mut out = vec![T::zero(); out_shape.numel()];
        let mut col = vec![T::zero(); k * cols];
        for n in 0..xs.n {
            matmul(true, false, k, cols, cin, w.data(), &x.data()[n * in_len..(n + 1) * in_len], &mut col, false);
            geom.col2im(&col, &mut out[n * out_len..(n + 1) * out_len]);
        }
        if let Some(b) = &b {
            add_bias(&mut out, b.data(), out_h * out_w);
        }

        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().push(
            "conv_transpose2d",
            Tensor::from_vec(out_shape, out)?,
            &parents,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut gw = needs[1].then(|| vec![T::zero(); w.numel()]);
                let mut col = vec![T::zero(); k * cols];
                for n in 0..xs.n {
                    geom.im2col(&g[n * out_len..(n + 1) * out_len], &mut col);
                    if let Some(gx) = gx.as_mut() {
                        matmul(false, false, cin, cols, k, w.data(), &col, &mut gx[n * in_len..(n + 1) * in_len], false);
                    }
                    if let Some(gw) = gw.as_mut() {
                        matmul(false, true, cin, k, cols, &x.data()[n * in_len..(n + 1) * in_len], &col, gw, true);
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, cout, out_h * out_w)));
                }
                grads
            }),
        )
    }
}
