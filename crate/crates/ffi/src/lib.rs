//! C interface to `regionnorm`.
//!
//! Every function returns an [`RnStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`rn_last_error_message`]. Images
//! cross the boundary as interleaved 8-bit pixels (row-major, `H x W x C`),
//! masks as one byte per pixel with nonzero meaning valid and 0 meaning hole,
//! and feature maps as `f32` in `N x C x H x W` order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use regionnorm::inpaintnet::{checkpoint, Generator};
use regionnorm::masks::{self, CoverageInterval, MaskKind, MaskSpec};
use regionnorm::metrics::{self, Image};
use regionnorm::norm::{region_normalize, shift_report};
use regionnorm::{Error, RegionMask, Shape, Tape, Tensor};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad sizes, ranges or configuration values.
    InvalidArgument = 2,
    /// File could not be read or written.
    Io = 3,
    /// Checkpoint file is malformed or incompatible.
    Checkpoint = 4,
    /// A computation produced NaN or infinity, or selected an empty region.
    Numeric = 5,
    /// The library panicked; this is a bug.
    Panic = 6,
}

/// Inpainting generator loaded from a checkpoint.
pub struct RnGenerator {
    inner: Generator<f32>,
}

/// Moments of a feature plane before and after its holes are filled with a
/// constant, predicted from the region moments and measured directly.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RnShiftReport {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu_known: f64,
    pub sigma_known: f64,
    pub mu_filled_hole: f64,
    pub sigma_filled_hole: f64,
    pub mu2_analytic: f64,
    pub sigma2_analytic: f64,
    pub mu2_empirical: f64,
    pub sigma2_empirical: f64,
    pub hole_pixels: usize,
    pub known_pixels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RnStatus {
    match e {
        Error::Shape(_) | Error::Config(_) | Error::Generation(_) => RnStatus::InvalidArgument,
        Error::Io { .. } | Error::Image { .. } | Error::Csv(_) => RnStatus::Io,
        Error::Checkpoint(_) => RnStatus::Checkpoint,
        Error::NonFinite { .. } | Error::Divergence { .. } | Error::EmptyRegion => RnStatus::Numeric,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::Shape(msg.into()))
}

/// Runs `body`, catching panics and recording the error message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            RnStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as `{what}`"));
            RnStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RnStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn mask_from_bytes(h: usize, w: usize, bytes: &[u8]) -> Result<RegionMask, Failure> {
    Ok(RegionMask::from_bits(h, w, bytes.iter().map(|&b| u8::from(b != 0)).collect())?)
}

/// Message of the last failed call on this thread, or NULL after a
/// success. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `regionnorm train`. On success `*out`
/// owns a handle that must be released with [`rn_generator_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rn_generator_load(path: *const c_char, out: *mut *mut RnGenerator) -> RnStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let inner = checkpoint::load::<f32>(path)?;
        *out = Box::into_raw(Box::new(RnGenerator { inner }));
        Ok(())
    })
}

/// Releases a handle from [`rn_generator_load`]. NULL is ignored.
///
/// # Safety
/// `generator` must come from [`rn_generator_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn rn_generator_free(generator: *mut RnGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Side length of the square images the generator expects.
///
/// # Safety
/// `generator` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_generator_image_size(generator: *const RnGenerator, out: *mut usize) -> RnStatus {
    guard(|| {
        let g = generator.as_ref().ok_or(Failure::Null("generator"))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = g.inner.config().image_size;
        Ok(())
    })
}

/// Sets the threshold of every learned-mask layer; must lie in (0, 1).
///
/// # Safety
/// `generator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_generator_set_threshold(generator: *mut RnGenerator, threshold: f64) -> RnStatus {
    guard(|| {
        let g = generator.as_mut().ok_or(Failure::Null("generator"))?;
        g.inner.set_rnl_threshold(threshold)?;
        Ok(())
    })
}

/// Fills the holes of one RGB image. `rgb` and `out_rgb` hold
/// `size * size * 3` bytes, `mask` holds `size * size`. Known pixels are
/// copied through unchanged.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rn_generator_inpaint(
    generator: *mut RnGenerator,
    rgb: *const u8,
    mask: *const u8,
    size: usize,
    out_rgb: *mut u8,
) -> RnStatus {
    guard(|| {
        let g = generator.as_mut().ok_or(Failure::Null("generator"))?;
        let expected = g.inner.config().image_size;
        if size != expected {
            return Err(invalid(format!("generator expects {expected}x{expected} images, got {size}x{size}")));
        }
        let plane = size * size;
        let rgb = slice(rgb, plane * 3, "rgb")?;
        let mask = mask_from_bytes(size, size, slice(mask, plane, "mask")?)?;
        let out = slice_mut(out_rgb, plane * 3, "out_rgb")?;
        let mut data = vec![0.0f32; plane * 3];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        let images = Tensor::from_vec(Shape::new(1, 3, size, size), data)?;
        let result = g.inner.infer(&images, &[mask])?;
        let comp = result.composite.data();
        for i in 0..plane {
            for c in 0..3 {
                out[i * 3 + c] = (comp[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(())
    })
}

/// Normalizes each channel of `x` separately over the valid and hole
/// regions of its sample's mask, without affine parameters.
///
/// # Safety
/// `x` and `out` hold `n * c * h * w` floats, `masks` holds `n * h * w` bytes.
#[no_mangle]
pub unsafe extern "C" fn rn_region_normalize(
    x: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    masks: *const u8,
    eps: f64,
    out: *mut f32,
) -> RnStatus {
    guard(|| {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be positive and finite, got {eps}")));
        }
        let shape = Shape::new(n, c, h, w);
        let x = slice(x, shape.numel(), "x")?;
        let bytes = slice(masks, n * h * w, "masks")?;
        let out = slice_mut(out, shape.numel(), "out")?;
        let masks = (0..n)
            .map(|i| mask_from_bytes(h, w, &bytes[i * h * w..(i + 1) * h * w]))
            .collect::<Result<Vec<_>, _>>()?;
        let tape = Tape::new();
        let input = tape.constant(Tensor::from_vec(shape, x.to_vec())?);
        let (y, _) = region_normalize(input, &masks, eps)?;
        out.copy_from_slice(y.value().data());
        Ok(())
    })
}

/// Moment shift caused by filling the holes of `plane` with `fill`.
///
/// # Safety
/// `plane` holds `len` doubles, `mask` holds `len` bytes, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rn_shift_report(
    plane: *const f64,
    mask: *const u8,
    len: usize,
    fill: f64,
    out: *mut RnShiftReport,
) -> RnStatus {
    guard(|| {
        let plane = slice(plane, len, "plane")?;
        let mask = mask_from_bytes(1, len, slice(mask, len, "mask")?)?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let r = shift_report(plane, &mask, fill)?;
        *out = RnShiftReport {
            mu1: r.mu1,
            sigma1: r.sigma1,
            mu_known: r.mu_3u,
            sigma_known: r.sigma_3u,
            mu_filled_hole: r.mu_3m,
            sigma_filled_hole: r.sigma_3m,
            mu2_analytic: r.mu2_analytic,
            sigma2_analytic: r.sigma2_analytic,
            mu2_empirical: r.mu2_empirical,
            sigma2_empirical: r.sigma2_empirical,
            hole_pixels: r.n_m,
            known_pixels: r.n_u,
        };
        Ok(())
    })
}

type Metric = fn(&Image, &Image) -> regionnorm::Result<f64>;

unsafe fn image_metric(
    f: Metric,
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> RnStatus {
    guard(|| {
        let len = width * height * channels;
        let a = Image::from_interleaved_u8(width, height, channels, slice(a, len, "a")?)?;
        let b = Image::from_interleaved_u8(width, height, channels, slice(b, len, "b")?)?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = f(&a, &b)?;
        Ok(())
    })
}

/// PSNR in dB of two 8-bit images, capped at 100 dB for identical inputs.
///
/// # Safety
/// `a` and `b` hold `width * height * channels` bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rn_psnr(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> RnStatus {
    image_metric(metrics::psnr, a, b, width, height, channels, out)
}

/// SSIM on luma with an 11x11 Gaussian window (sigma 1.5).
///
/// # Safety
/// As for [`rn_psnr`].
#[no_mangle]
pub unsafe extern "C" fn rn_ssim(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> RnStatus {
    image_metric(metrics::ssim, a, b, width, height, channels, out)
}

/// Mean absolute error as a percentage of 255.
///
/// # Safety
/// As for [`rn_psnr`].
#[no_mangle]
pub unsafe extern "C" fn rn_l1_percent(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> RnStatus {
    image_metric(metrics::l1_percent, a, b, width, height, channels, out)
}

/// Mask shapes for [`rn_mask_generate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnMaskKind {
    /// Centred square covering a quarter of the image.
    Regular = 0,
    /// Random brush strokes with hole ratio inside `[coverage_lo, coverage_hi]`.
    Irregular = 1,
}

/// Writes a `height x width` mask (1 valid, 0 hole) to `out`. The same
/// `(seed, index)` always gives the same mask.
///
/// # Safety
/// `out` holds `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn rn_mask_generate(
    kind: RnMaskKind,
    height: usize,
    width: usize,
    coverage_lo: f64,
    coverage_hi: f64,
    seed: u64,
    index: u64,
    out: *mut u8,
) -> RnStatus {
    guard(|| {
        let out = slice_mut(out, height * width, "out")?;
        let spec = MaskSpec {
            kind: match kind {
                RnMaskKind::Regular => MaskKind::Regular,
                RnMaskKind::Irregular => MaskKind::Irregular,
            },
            coverage: CoverageInterval::new(coverage_lo, coverage_hi)?,
            seed,
        };
        let mask = masks::generate(height, width, &spec, index)?;
        out.copy_from_slice(mask.bits());
        Ok(())
    })
}
