//! Mean/variance shift caused by normalizing a feature map whose hole is
//! filled with a constant together with its known pixels.

use crate::error::{Error, Result};
use crate::masks::RegionMask;

/// Moments of one channel before and after hole filling.
///
/// Fields of a region with no pixels are `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    /// Full-map moments of the original, uncorrupted channel.
    pub mu1: f64,
    pub sigma1: f64,
    /// Moments of the known region.
    pub mu_3u: f64,
    pub sigma_3u: f64,
    /// Moments of the filled hole (the fill constant and 0 when non-empty).
    pub mu_3m: f64,
    pub sigma_3m: f64,
    /// Full-map moments of the filled map predicted from the region moments.
    pub mu2_analytic: f64,
    pub sigma2_analytic: f64,
    /// Full-map moments measured on the filled map.
    pub mu2_empirical: f64,
    pub sigma2_empirical: f64,
    pub fill_value: f64,
    pub n: usize,
    pub n_m: usize,
    pub n_u: usize,
    /// One of the two regions is empty.
    pub degenerate: bool,
}

impl ShiftReport {
    /// Shift of the full-map mean away from the known-region mean.
    pub fn mean_shift(&self) -> f64 {
        self.mu2_analytic - self.mu_3u
    }
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let count = values.clone().count();
    if count == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt(), count)
}

/// Fills the hole (mask 0) of `plane` with `fill_value` and compares the
/// measured moments of the filled map with
/// `mu2 = n_u/n * mu_3u + n_m/n * fill` and
/// `sigma2^2 = n_u/n * sigma_3u^2 + n_m * n_u / n^2 * (mu_3u - fill)^2`.
pub fn shift_report(plane: &[f64], mask: &RegionMask, fill_value: f64) -> Result<ShiftReport> {
    if plane.len() != mask.len() || plane.is_empty() {
        return Err(Error::shape(format!(
            "channel of {} values with a {}x{} mask",
            plane.len(),
            mask.height(),
            mask.width()
        )));
    }
    if plane.iter().any(|v| !v.is_finite()) || !fill_value.is_finite() {
        return Err(Error::NonFinite { op: "shift_report" });
    }
    let bits = mask.bits();
    let (mu1, sigma1, n) = moments(plane.iter().copied());
    let known = plane.iter().zip(bits).filter(|(_, &b)| b == 1).map(|(&v, _)| v);
    let (mu_3u, sigma_3u, n_u) = moments(known);
    let n_m = n - n_u;
    let filled = plane
        .iter()
        .zip(bits)
        .map(|(&v, &b)| if b == 1 { v } else { fill_value });
    let (mu2_empirical, sigma2_empirical, _) = moments(filled.clone());
    let hole = filled.zip(bits).filter(|(_, &b)| b == 0).map(|(v, _)| v);
    let (mu_3m, sigma_3m, _) = moments(hole);

    let degenerate = n_m == 0 || n_u == 0;
    let (mu2_analytic, sigma2_analytic) = if n_u == 0 {
        // only the constant hole remains
        (fill_value, 0.0)
    } else {
        let (nf, uf, mf) = (n as f64, n_u as f64, n_m as f64);
        let mu2 = uf / nf * mu_3u + mf / nf * fill_value;
        let var2 = uf / nf * sigma_3u * sigma_3u + mf * uf / (nf * nf) * (mu_3u - fill_value).powi(2);
        (mu2, var2.sqrt())
    };
    Ok(ShiftReport {
        mu1,
        sigma1,
        mu_3u,
        sigma_3u,
        mu_3m,
        sigma_3m,
        mu2_analytic,
        sigma2_analytic,
        mu2_empirical,
        sigma2_empirical,
        fill_value,
        n,
        n_m,
        n_u,
        degenerate,
    })
}
