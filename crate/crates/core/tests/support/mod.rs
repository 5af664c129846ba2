//! Brute-force reference implementations used by the integration tests.
#![allow(dead_code)]

use sredgenet::{ImageBuffer, Plane};

pub fn luma(img: &ImageBuffer, y: usize, x: usize) -> f64 {
    if img.channels() == 3 {
        let r = img.get(0, y, x) as f64;
        let g = img.get(1, y, x) as f64;
        let b = img.get(2, y, x) as f64;
        16.0 + 65.481 * r + 128.553 * g + 24.966 * b
    } else {
        255.0 * img.get(0, y, x) as f64
    }
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> f64 {
    let (h, w) = a.hw();
    let mut sse = 0.0;
    let mut n = 0.0;
    for y in border..h - border {
        for x in border..w - border {
            let d = luma(a, y, x) - luma(b, y, x);
            sse += d * d;
            n += 1.0;
        }
    }
    if sse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (255.0f64.powi(2) / (sse / n)).log10()
}

/// Window-by-window SSIM with a two-pass variance.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (h, w) = a.hw();
    let mut win = [[0.0f64; 11]; 11];
    let mut total_w = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total_w += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let mut ma = 0.0;
            let mut mb = 0.0;
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / total_w;
                    ma += k * luma(a, y0 + i, x0 + j);
                    mb += k * luma(b, y0 + i, x0 + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / total_w;
                    let da = luma(a, y0 + i, x0 + j) - ma;
                    let db = luma(b, y0 + i, x0 + j) - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

pub fn keys(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Dense `n_out x n_in` resampling matrix, kernel widened by the
/// downscale factor, rows normalised, border samples replicated.
pub fn resize_matrix(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let step = n_in as f64 / n_out as f64;
    let widen = step.max(1.0);
    let mut m = vec![vec![0.0; n_in]; n_out];
    for (i, row) in m.iter_mut().enumerate() {
        let c = (i as f64 + 0.5) * step - 0.5;
        let lo = (c - 2.0 * widen).floor() as i64 - 1;
        let hi = (c + 2.0 * widen).ceil() as i64 + 1;
        for j in lo..=hi {
            let k = keys((c - j as f64) / widen);
            row[j.clamp(0, n_in as i64 - 1) as usize] += k;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// `clamp(My * X * Mx^T)` per channel.
pub fn bicubic(img: &ImageBuffer, out: (usize, usize)) -> Vec<f64> {
    let (h, w) = img.hw();
    let my = resize_matrix(h, out.0);
    let mx = resize_matrix(w, out.1);
    let mut res = Vec::new();
    for c in 0..img.channels() {
        for row in &my {
            for mrow in &mx {
                let mut v = 0.0;
                for (y, a) in row.iter().enumerate() {
                    for (x, b) in mrow.iter().enumerate() {
                        v += a * b * img.get(c, y, x) as f64;
                    }
                }
                res.push(v.clamp(0.0, 1.0));
            }
        }
    }
    res
}

fn replicate(src: &[f64], h: usize, w: usize, y: i64, x: i64) -> f64 {
    src[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize]
}

fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut v = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let k = g[(dy + r) as usize] * g[(dx + r) as usize] / (s * s);
                    v += k * replicate(src, h, w, y + dy, x + dx);
                }
            }
            out[y as usize * w + x as usize] = v;
        }
    }
    out
}

/// Textbook Canny: Gaussian blur, Sobel, 4-direction non-maximum
/// suppression, hysteresis by flood fill. Thresholds are fractions of the
/// largest gradient magnitude; near-ties (1e-9 of it) go forward.
pub fn canny(plane: &Plane, sigma: f64, low: f64, high: f64) -> Vec<bool> {
    let (h, w) = plane.hw();
    let src: Vec<f64> = plane.data.iter().map(|&v| v as f64).collect();
    let sm = blur(&src, h, w, sigma);
    let p = |y: i64, x: i64| replicate(&sm, h, w, y, x);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            gx[i] = p(y - 1, x + 1) + 2.0 * p(y, x + 1) + p(y + 1, x + 1)
                - p(y - 1, x - 1)
                - 2.0 * p(y, x - 1)
                - p(y + 1, x - 1);
            gy[i] = p(y + 1, x - 1) + 2.0 * p(y + 1, x) + p(y + 1, x + 1)
                - p(y - 1, x - 1)
                - 2.0 * p(y - 1, x)
                - p(y - 1, x + 1);
        }
    }
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![false; h * w];
    }
    let m = |y: i64, x: i64| {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            if mag[i] == 0.0 {
                continue;
            }
            let mut deg = gy[i].atan2(gx[i]).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            let sector = ((deg / 45.0).round() as i64) % 4;
            let (dy, dx) = [(0, 1), (1, 1), (1, 0), (1, -1)][sector as usize];
            let eps = 1e-9 * max;
            if mag[i] >= m(y - dy, x - dx) - eps && mag[i] > m(y + dy, x + dx) + eps {
                thin[i] = mag[i];
            }
        }
    }
    let (lo, hi) = (low * max, high * max);
    let mut edge = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] > 0.0 && thin[i] >= hi).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] > 0.0 && thin[j] >= lo {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edge
}

/// Direct-sum NCHW cross-correlation with zero padding.
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    wt: &[f64],
    ws: [usize; 4],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, ci, h, w] = xs;
    let [co, _, kh, kw] = ws;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * stride + i) as i64 - pad as i64;
                                let sx = (xx * stride + j) as i64 - pad as i64;
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                acc += wt[((o * ci + c) * kh + i) * kw + j]
                                    * x[((b * ci + c) * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[((b * co + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    (out, [n, co, ho, wo])
}

/// Adaptive average pooling over one plane, bin `i` covering
/// `[floor(i*n/b), floor((i+1)*n/b))`.
pub fn adaptive_pool(src: &[f64], h: usize, w: usize, bh: usize, bw: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..bh {
        for j in 0..bw {
            let ys: Vec<usize> = (0..h).filter(|&y| y >= i * h / bh && y < (i + 1) * h / bh).collect();
            let xs: Vec<usize> = (0..w).filter(|&x| x >= j * w / bw && x < (j + 1) * w / bw).collect();
            let mut s = 0.0;
            for &y in &ys {
                for &x in &xs {
                    s += src[y * w + x];
                }
            }
            out.push(s / (ys.len() * xs.len()) as f64);
        }
    }
    out
}

/// Half-pixel bilinear resampling of one plane, edge-clamped.
pub fn bilinear(src: &[f64], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let coord = |d: usize, n_in: usize, n_out: usize| {
        let s = (d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        s.max(0.0).min((n_in - 1) as f64)
    };
    let mut out = Vec::new();
    for y in 0..ho {
        let sy = coord(y, h, ho);
        for x in 0..wo {
            let sx = coord(x, w, wo);
            let mut v = 0.0;
            for yy in 0..h {
                for xx in 0..w {
                    let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                    let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                    v += wy * wx * src[yy * w + xx];
                }
            }
            out.push(v);
        }
    }
    out
}
