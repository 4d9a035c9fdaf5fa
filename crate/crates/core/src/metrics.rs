//! PSNR, SSIM and feature cosine similarity. All accumulation is in f64.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak 1, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape(), "psnr")?;
    if a.is_empty() {
        return Err(Error::invalid("psnr of an empty image"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - mid).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Valid-region separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
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

/// Mean SSIM over channels and valid window positions.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape(), "ssim")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let taps = ssim_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = a.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let y: Vec<f64> = b.plane(n, c).iter().map(|v| v.as_f64()).collect();
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
            let mx = filter_valid(&x, s.h, s.w, &taps);
            let my = filter_valid(&y, s.h, s.w, &taps);
            let mxx = filter_valid(&prod(&x, &x), s.h, s.w, &taps);
            let myy = filter_valid(&prod(&y, &y), s.h, s.w, &taps);
            let mxy = filter_valid(&prod(&x, &y), s.h, s.w, &taps);
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let cov = mxy[i] - ux * uy;
                total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            }
            count += mx.len();
        }
    }
    Ok(total / count as f64)
}

/// Cosine of the flattened tensors; 0 when either norm is 0.
pub fn feature_cosine<T: Real>(fa: &Tensor<T>, fb: &Tensor<T>) -> Result<f64> {
    fa.expect_shape(fb.shape(), "feature_cosine")?;
    let dot: f64 = fa.data().iter().zip(fb.data()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
    let (na, nb) = (fa.norm_l2(), fb.norm_l2());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub noise_spec: String,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip)]
    pub clipped_fraction: f64,
}

/// Per-image scores with corpus means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_clipped(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.clipped_fraction))
    }

    /// Columns `image_id, noise_spec, psnr, ssim`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
