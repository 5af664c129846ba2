use std::collections::VecDeque;

use crate::error::{Error, Result};

use super::{EdgeMap, Plane};

/// Horizontal gradient, vertical gradient and magnitude.
#[derive(Clone, Debug)]
pub struct SobelOutput {
    pub gx: Plane,
    pub gy: Plane,
    pub magnitude: Plane,
}

fn sobel_f64(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[y * w + x]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) - at(y - 1, x - 1))
                + 2.0 * (at(y, x + 1) - at(y, x - 1))
                + (at(y + 1, x + 1) - at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) - at(y - 1, x - 1))
                + 2.0 * (at(y + 1, x) - at(y - 1, x))
                + (at(y + 1, x + 1) - at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// 3x3 Sobel gradients with replicated borders.
pub fn sobel_gradients(plane: &Plane) -> SobelOutput {
    let (h, w) = plane.hw();
    let src: Vec<f64> = plane.data.iter().map(|&v| v as f64).collect();
    let (gx, gy) = sobel_f64(&src, h, w);
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b) as f32).collect();
    let to_plane = |v: Vec<f64>| Plane {
        height: h,
        width: w,
        data: v.into_iter().map(|x| x as f32).collect(),
    };
    SobelOutput {
        gx: to_plane(gx),
        gy: to_plane(gy),
        magnitude: Plane {
            height: h,
            width: w,
            data: magnitude,
        },
    }
}

/// Normalised 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur_f64(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("blur sigma must be > 0, got {sigma}")));
    }
    let (h, w) = plane.hw();
    let src: Vec<f64> = plane.data.iter().map(|&v| v as f64).collect();
    let out = blur_f64(&src, h, w, sigma);
    Plane::new(h, w, out.into_iter().map(|v| v as f32).collect())
}

/// Sobel gradients of the blurred plane. The minimum is subtracted first
/// (exact in f64), so a constant shift of the input does not change a bit
/// of the result.
fn smoothed_gradients(plane: &Plane, sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, w) = plane.hw();
    let lo = plane.data.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let src: Vec<f64> = plane.data.iter().map(|&v| v as f64 - lo).collect();
    let smooth = blur_f64(&src, h, w, sigma);
    let (gx, gy) = sobel_f64(&smooth, h, w);
    let mag = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    (gx, gy, mag)
}

/// Magnitudes closer than this fraction of the maximum count as ties.
const TIE_EPS: f64 = 1e-9;

fn non_maximum_suppression(gx: &[f64], gy: &[f64], mag: &[f64], h: usize, w: usize, max: f64) -> Vec<f64> {
    let eps = TIE_EPS * max;
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (dy, dx) toward the gradient direction
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let behind = at(yi - dy, xi - dx);
            let ahead = at(yi + dy, xi + dx);
            // ties, up to roundoff, go to the sample further along the
            // gradient so plateaus of width two thin to one pixel
            if m >= behind - eps && m > ahead + eps {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(nms: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in nms.iter().enumerate() {
        if m > 0.0 && m >= high {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && nms[j] > 0.0 && nms[j] >= low {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

fn canny_core(plane: &Plane, sigma: f64, thresholds: impl FnOnce(f64) -> Option<(f64, f64)>) -> Result<EdgeMap> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("canny sigma must be > 0, got {sigma}")));
    }
    let (h, w) = plane.hw();
    let (gx, gy, mag) = smoothed_gradients(plane, sigma);
    let max = mag.iter().copied().fold(0.0, f64::max);
    let Some((low, high)) = thresholds(max) else {
        return Ok(EdgeMap::filled(h, w, 0.0));
    };
    let nms = non_maximum_suppression(&gx, &gy, &mag, h, w, max);
    Ok(EdgeMap::new(Plane::new(h, w, hysteresis(&nms, h, w, low, high))?))
}

fn check_thresholds(low: f64, high: f64) -> Result<()> {
    if !(low > 0.0 && low < high) {
        return Err(Error::Parameter(format!(
            "canny needs 0 < t_low < t_high, got t_low={low} t_high={high}"
        )));
    }
    Ok(())
}

/// Canny edges with absolute hysteresis thresholds on the gradient
/// magnitude. Output is binary.
pub fn canny(plane: &Plane, sigma: f64, t_low: f64, t_high: f64) -> Result<EdgeMap> {
    check_thresholds(t_low, t_high)?;
    canny_core(plane, sigma, |_| Some((t_low, t_high)))
}

/// Canny edges with thresholds given as fractions of the largest smoothed
/// gradient magnitude. A flat plane yields an empty map.
pub fn canny_relative(plane: &Plane, sigma: f64, low_frac: f64, high_frac: f64) -> Result<EdgeMap> {
    check_thresholds(low_frac, high_frac)?;
    canny_core(plane, sigma, |max| {
        (max > 0.0).then_some((low_frac * max, high_frac * max))
    })
}
