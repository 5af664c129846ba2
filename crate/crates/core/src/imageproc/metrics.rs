use crate::error::{Error, Result};

use super::color::luma_255;
use super::ImageBuffer;

/// How an infinite PSNR (identical images) is written in reports.
pub const PSNR_INF_LABEL: &str = "inf";

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.channels(), a.hw()) != (b.channels(), b.hw()) {
        return Err(Error::Size(format!(
            "metric inputs differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// PSNR in dB on the luma plane with a `scale`-pixel border removed.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, scale: usize) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.hw();
    if 2 * scale >= h || 2 * scale >= w {
        return Err(Error::Size(format!(
            "a {scale}-pixel border crop leaves nothing of a {h}x{w} image"
        )));
    }
    let (ya, yb) = (luma_255(a), luma_255(b));
    let mut sse = 0.0;
    for y in scale..h - scale {
        for x in scale..w - scale {
            let d = ya[y * w + x] - yb[y * w + x];
            sse += d * d;
        }
    }
    let mse = sse / ((h - 2 * scale) * (w - 2 * scale)) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode Gaussian filter.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM on the luma plane: 11x11 Gaussian window (sigma 1.5),
/// valid windows only.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.hw();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (ya, yb) = (luma_255(a), luma_255(b));
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&ya, h, w, &k);
    let mu_b = filter_valid(&yb, h, w, &k);
    let e_aa = filter_valid(&sq(&ya), h, w, &k);
    let e_bb = filter_valid(&sq(&yb), h, w, &k);
    let e_ab = filter_valid(&prod, h, w, &k);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * (ma * mb) + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (var_a + var_b + C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}
