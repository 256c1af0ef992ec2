//! Image quality metrics: PSNR, SSIM (11x11 Gaussian window) and mean
//! absolute error as a percentage of the 8-bit range.
//!
//! Images handed to these functions are in `[0, 255]`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const PEAK: f64 = 255.0;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

/// Planar (`C x H x W`) image with values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Sample `n` of a tensor holding values in `[0, 1]`, scaled to
    /// `[0, 255]`.
    pub fn from_unit_tensor<T: Element>(t: &Tensor<T>, n: usize) -> Self {
        let s = t.shape();
        let len = s.c * s.plane();
        let data = t.data()[n * len..(n + 1) * len].iter().map(|v| v.f64() * PEAK).collect();
        Image {
            width: s.w,
            height: s.h,
            channels: s.c,
            data,
        }
    }

    /// Interleaved 8-bit pixels.
    pub fn from_interleaved_u8(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} bytes for a {width}x{height} image with {channels} channels",
                pixels.len()
            )));
        }
        let plane = width * height;
        let mut data = vec![0.0; pixels.len()];
        for (i, &p) in pixels.iter().enumerate() {
            data[(i % channels) * plane + i / channels] = p as f64;
        }
        Image::new(width, height, channels, data)
    }

    /// ITU-R BT.601 luma for RGB, the single channel otherwise.
    pub fn luma(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        if self.channels != 3 {
            return self.data[..plane].to_vec();
        }
        let (r, rest) = self.data.split_at(plane);
        let (g, b) = rest.split_at(plane);
        (0..plane)
            .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
            .collect()
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::shape(format!(
            "image sizes differ: {}x{}x{} vs {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    if a.data.is_empty() {
        return Err(Error::shape("empty image"));
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)`, or [`PSNR_CAP_DB`] when the images are equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean `|a - b| / 255 * 100` over every value.
pub fn l1_percent(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let mae = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
    Ok(mae / PEAK * 100.0)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(src: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut rows = vec![0.0; height * ow];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of the luma channels over every valid
/// placement of the Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_window(a, b, SSIM_WINDOW, SSIM_SIGMA)
}

pub fn ssim_with_window(a: &Image, b: &Image, window: usize, sigma: f64) -> Result<f64> {
    check_pair(a, b)?;
    if a.width < window || a.height < window {
        return Err(Error::shape(format!(
            "SSIM window {window} larger than {}x{} image",
            a.height, a.width
        )));
    }
    let (x, y) = (a.luma(), b.luma());
    let (w, h) = (a.width, a.height);
    let taps = gaussian_taps(window, sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, w, h, &taps));
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub l1_percent: f64,
    pub pixel_count: usize,
}

impl MetricReport {
    pub fn identical(&self) -> bool {
        self.psnr_db >= PSNR_CAP_DB
    }
}

pub fn evaluate(pred: &Image, target: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(pred, target)?,
        ssim: ssim(pred, target)?,
        l1_percent: l1_percent(pred, target)?,
        pixel_count: pred.width * pred.height,
    })
}

/// Running means over many images. Identical pairs are kept out of the PSNR
/// mean (their capped value is a convention, not a measurement) and counted
/// separately.
#[derive(Clone, Debug, Default)]
pub struct MetricSummary {
    count: usize,
    identical: usize,
    psnr_sum: f64,
    ssim_sum: f64,
    l1_sum: f64,
}

impl MetricSummary {
    pub fn add(&mut self, r: &MetricReport) {
        self.count += 1;
        if r.identical() {
            self.identical += 1;
        } else {
            self.psnr_sum += r.psnr_db;
        }
        self.ssim_sum += r.ssim;
        self.l1_sum += r.l1_percent;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn identical_count(&self) -> usize {
        self.identical
    }

    /// Mean PSNR of the non-identical pairs; the cap if every pair matched.
    pub fn mean_psnr(&self) -> f64 {
        let n = self.count - self.identical;
        if n == 0 {
            PSNR_CAP_DB
        } else {
            self.psnr_sum / n as f64
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim_sum / self.count.max(1) as f64
    }

    pub fn mean_l1(&self) -> f64 {
        self.l1_sum / self.count.max(1) as f64
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub image: String,
    /// Measured hole coverage of the mask used for this image.
    pub mask_ratio: f64,
    pub report: MetricReport,
}

pub const METRICS_HEADER: [&str; 5] = ["image", "mask_ratio", "psnr", "ssim", "l1"];

/// Writes rows under the header `image,mask_ratio,psnr,ssim,l1`.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            format!("{:.6}", r.mask_ratio),
            format!("{:.6}", r.report.psnr_db),
            format!("{:.6}", r.report.ssim),
            format!("{:.6}", r.report.l1_percent),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
