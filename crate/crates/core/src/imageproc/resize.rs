use crate::error::{Error, Result};

use super::ImageBuffer;

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`, support `[-2, 2]`.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per-output-sample `(source index, weight)` taps along one axis.
///
/// Downscaling stretches the kernel by `in/out` (antialiasing); weights are
/// renormalised to sum to one and source indices are clamped to the axis.
pub fn resample_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let (kernel_scale, support) = if scale < 1.0 {
        (scale, 2.0 / scale)
    } else {
        (1.0, 2.0)
    };
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let first = (center - support).floor() as isize;
            let last = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for j in first..=last {
                let wgt = cubic_kernel((center - j as f64) * kernel_scale);
                if wgt == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, in_len as isize - 1) as usize;
                total += wgt;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Antialiased bicubic resampling; output is clamped to `[0,1]`.
pub fn bicubic_resize(img: &ImageBuffer, out_hw: (usize, usize)) -> Result<ImageBuffer> {
    let (ho, wo) = out_hw;
    if ho == 0 || wo == 0 {
        return Err(Error::Size(format!("resize target must be >= 1x1, got {ho}x{wo}")));
    }
    let (h, w) = img.hw();
    if (h, w) == (ho, wo) {
        return Ok(img.clone());
    }
    let wy = resample_weights(h, ho);
    let wx = resample_weights(w, wo);
    let mut out = Vec::with_capacity(img.channels() * ho * wo);
    let mut rows = vec![0.0f64; h * wo];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, taps) in wx.iter().enumerate() {
                rows[y * wo + x] = taps.iter().map(|&(j, k)| k * src[j] as f64).sum();
            }
        }
        for taps in &wy {
            for x in 0..wo {
                let v: f64 = taps.iter().map(|&(j, k)| k * rows[j * wo + x]).sum();
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageBuffer::new(img.channels(), ho, wo, out)
}

/// Resize ground truth so both sides are multiples of 8.
pub fn offset_fix(hr: &ImageBuffer) -> Result<ImageBuffer> {
    let (h, w) = hr.hw();
    if h < 8 || w < 8 {
        return Err(Error::Size(format!(
            "offset fix needs at least 8x8, got {h}x{w}"
        )));
    }
    bicubic_resize(hr, (h / 8 * 8, w / 8 * 8))
}

/// `(lr, hr_fixed)` with `hr_fixed = offset_fix(hr)` and `lr` its bicubic
/// downscale by `scale`.
pub fn degrade_pair(hr: &ImageBuffer, scale: usize) -> Result<(ImageBuffer, ImageBuffer)> {
    if ![2, 4, 8].contains(&scale) {
        return Err(Error::Parameter(format!("scale must be 2, 4 or 8, got {scale}")));
    }
    let fixed = offset_fix(hr)?;
    let (h, w) = fixed.hw();
    let lr = bicubic_resize(&fixed, (h / scale, w / scale))?;
    Ok((lr, fixed))
}
