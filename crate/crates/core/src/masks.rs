//! Binary region masks.
//!
//! Polarity is fixed crate-wide: `1` marks a known (uncorrupted) pixel and
//! `0` a hole pixel. The coverage ratio counts holes.

use std::fmt;
use std::path::Path;

use image::{GrayImage, Luma};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RegionMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl fmt::Debug for RegionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RegionMask({}x{}, coverage {:.4})",
            self.height,
            self.width,
            self.coverage_ratio()
        )
    }
}

impl RegionMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "{} mask bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::shape("mask values must be 0 or 1"));
        }
        Ok(RegionMask { height, width, bits })
    }

    /// No holes.
    pub fn ones(height: usize, width: usize) -> Self {
        RegionMask {
            height,
            width,
            bits: vec![1; height * width],
        }
    }

    /// Everything is a hole.
    pub fn zeros(height: usize, width: usize) -> Self {
        RegionMask {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of hole pixels.
    pub fn hole_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    /// Number of known pixels.
    pub fn valid_count(&self) -> usize {
        self.len() - self.hole_count()
    }

    /// Fraction of pixels that are holes.
    pub fn coverage_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.hole_count() as f64 / self.len() as f64
    }

    fn punch(&mut self, y: isize, x: isize) {
        if y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width {
            self.bits[y as usize * self.width + x as usize] = 0;
        }
    }

    /// `1 x 1 x H x W` tensor of the mask values.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| T::of(b as f64)).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("mask shape")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) == 1 { 255 } else { 0 }])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
    }

    /// Loads any PNG as grayscale; values `>= 128` become 1.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })?
            .into_luma8();
        let bits = img.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
        RegionMask::from_bits(img.height() as usize, img.width() as usize, bits)
    }
}

/// Validates a mask batch against a tensor shape: either one mask shared by
/// every sample or one per sample, each matching the spatial size.
pub(crate) fn check_batch(masks: &[RegionMask], shape: Shape) -> Result<()> {
    if masks.len() != 1 && masks.len() != shape.n {
        return Err(Error::shape(format!(
            "{} masks for a batch of {}",
            masks.len(),
            shape.n
        )));
    }
    for m in masks {
        if (m.height, m.width) != (shape.h, shape.w) {
            return Err(Error::shape(format!(
                "{}x{} mask for tensor {shape}",
                m.height, m.width
            )));
        }
    }
    Ok(())
}

pub(crate) fn for_sample(masks: &[RegionMask], n: usize) -> &RegionMask {
    if masks.len() == 1 {
        &masks[0]
    } else {
        &masks[n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Regular,
    Irregular,
}

/// Requested hole coverage `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageInterval {
    pub lo: f64,
    pub hi: f64,
}

impl CoverageInterval {
    /// The widest coverage the irregular protocol uses.
    pub const MAX: f64 = 0.6;

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=Self::MAX).contains(&lo) || !(0.0..=Self::MAX).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!(
                "coverage interval [{lo}, {hi}] must satisfy 0 <= lo < hi <= {}",
                Self::MAX
            )));
        }
        Ok(CoverageInterval { lo, hi })
    }

    /// The six decile bins `0-10% ... 50-60%`.
    pub fn deciles() -> Vec<CoverageInterval> {
        (0..6)
            .map(|i| CoverageInterval {
                lo: i as f64 / 10.0,
                hi: (i + 1) as f64 / 10.0,
            })
            .collect()
    }

    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lo && ratio <= self.hi
    }
}

impl fmt::Display for CoverageInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for CoverageInterval {
    type Err = Error;

    /// Parses `lo-hi` or `lo:hi`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(['-', ':'])
            .ok_or_else(|| Error::Config(format!("coverage interval `{s}` is not `lo-hi`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{v}` in interval `{s}`")))
        };
        CoverageInterval::new(parse(lo)?, parse(hi)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub coverage: CoverageInterval,
    pub seed: u64,
}

/// Centred rectangular hole of `h/2 x w/2` pixels, a quarter of the image.
pub fn regular_square_mask(height: usize, width: usize) -> Result<RegionMask> {
    if !height.is_multiple_of(2) || !width.is_multiple_of(2) || height == 0 || width == 0 {
        return Err(Error::shape(format!(
            "regular mask needs even positive dimensions, got {height}x{width}"
        )));
    }
    let mut mask = RegionMask::ones(height, width);
    let (top, left) = (height / 4, width / 4);
    for y in top..top + height / 2 {
        for x in left..left + width / 2 {
            mask.bits[y * width + x] = 0;
        }
    }
    Ok(mask)
}

const MAX_ATTEMPTS: usize = 100;
const MAX_REJECTED_STROKES: usize = 30;

/// Free-form hole made of random brush strokes (polyline random walks with
/// a random brush radius). Strokes are added until the coverage reaches a
/// target drawn from the interval; a stroke that overshoots the interval is
/// discarded and retried smaller.
pub fn irregular_stroke_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    coverage: CoverageInterval,
    rng: &mut R,
) -> Result<RegionMask> {
    if height == 0 || width == 0 {
        return Err(Error::shape("irregular mask needs positive dimensions"));
    }
    for _ in 0..MAX_ATTEMPTS {
        let target = rng.gen_range(coverage.lo..coverage.hi);
        let mut mask = RegionMask::ones(height, width);
        let mut scale = 1.0;
        let mut rejected = 0;
        while mask.coverage_ratio() < target && rejected < MAX_REJECTED_STROKES {
            let mut candidate = mask.clone();
            draw_stroke(&mut candidate, scale, rng);
            if candidate.coverage_ratio() > coverage.hi {
                rejected += 1;
                scale *= 0.7;
            } else {
                mask = candidate;
            }
        }
        if coverage.contains(mask.coverage_ratio()) {
            return Ok(mask);
        }
    }
    Err(Error::Generation(format!(
        "no {height}x{width} mask with coverage in [{}, {}] after {MAX_ATTEMPTS} attempts",
        coverage.lo, coverage.hi
    )))
}

/// Generates one mask per `spec`, seeded from `spec.seed`.
pub fn generate(height: usize, width: usize, spec: &MaskSpec, index: u64) -> Result<RegionMask> {
    use rand::SeedableRng;
    match spec.kind {
        MaskKind::Regular => regular_square_mask(height, width),
        MaskKind::Irregular => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index);
            irregular_stroke_mask(height, width, spec.coverage, &mut rng)
        }
    }
}

fn draw_stroke<R: Rng + ?Sized>(mask: &mut RegionMask, scale: f64, rng: &mut R) {
    let size = mask.height.min(mask.width) as f64;
    let vertices = rng.gen_range(1..=5);
    let radius = (rng.gen_range(size / 64.0..=size / 20.0) * scale).max(0.5);
    let mut y = rng.gen_range(0.0..mask.height as f64);
    let mut x = rng.gen_range(0.0..mask.width as f64);
    for _ in 0..vertices {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let length = rng.gen_range(size / 16.0..=size / 5.0) * scale;
        let ny = (y + length * angle.sin()).clamp(0.0, mask.height as f64 - 1.0);
        let nx = (x + length * angle.cos()).clamp(0.0, mask.width as f64 - 1.0);
        let steps = ((ny - y).hypot(nx - x) / 0.5).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp_disc(mask, y + t * (ny - y), x + t * (nx - x), radius);
        }
        (y, x) = (ny, nx);
    }
}

fn stamp_disc(mask: &mut RegionMask, cy: f64, cx: f64, radius: f64) {
    let r = radius.ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (py, px) = (iy + dy, ix + dx);
            if (py as f64 - cy).hypot(px as f64 - cx) <= radius {
                mask.punch(py, px);
            }
        }
    }
}

/// Nearest-neighbour subsampling: keeps the top-left pixel of each
/// `factor x factor` block.
pub fn downsample_mask(mask: &RegionMask, factor: usize) -> Result<RegionMask> {
    if factor == 0 || !mask.height.is_multiple_of(factor) || !mask.width.is_multiple_of(factor) {
        return Err(Error::shape(format!(
            "factor {factor} does not divide a {}x{} mask",
            mask.height, mask.width
        )));
    }
    let (h, w) = (mask.height / factor, mask.width / factor);
    let bits = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| mask.get(y * factor, x * factor))
        .collect();
    RegionMask::from_bits(h, w, bits)
}
