//! Forward and backward numeric kernels behind the tape operations.
//!
//! Every function here is a pure function of its tensor arguments.

use crate::error::{dim_err, Result};

use super::{Scalar, Tensor};

/// Geometry of a 2-D convolution, validated once and shared by forward and
/// backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, c, h, w] = input[..] else {
            return Err(dim_err!("conv2d input must be NCHW, got {:?}", input));
        };
        let [o, i, kh, kw] = weight[..] else {
            return Err(dim_err!("conv2d weight must be OIKK, got {:?}", weight));
        };
        if i != c {
            return Err(dim_err!(
                "conv2d input channel axis C={} does not match weight axis I={}",
                c,
                i
            ));
        }
        if kh != kw {
            return Err(dim_err!("conv2d kernel must be square, got {}x{}", kh, kw));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err!(
                "conv2d kernel {}x{} exceeds padded input H={} W={} (pad {})",
                kh,
                kw,
                h,
                w,
                pad
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            o,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let l = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let l = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation (no kernel flip).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.o] {
            return Err(dim_err!(
                "conv2d bias shape {:?} does not match output channels O={}",
                b.shape(),
                g.o
            ));
        }
    }
    let (rows, l) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); g.n * g.o * l];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * l]
    };
    let in_stride = g.c * g.h * g.w;
    for n in 0..g.n {
        let xn = &x.data()[n * in_stride..(n + 1) * in_stride];
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut col);
            &col
        };
        let on = &mut out[n * g.o * l..(n + 1) * g.o * l];
        if let Some(b) = bias {
            for (o, chunk) in on.chunks_mut(l).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.o,
            rows,
            l,
            T::one(),
            weight.data(),
            rows as isize,
            1,
            cols,
            l as isize,
            1,
            beta,
            on,
            l as isize,
            1,
        );
    }
    Tensor::new(&[g.n, g.o, g.ho, g.wo], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    let (rows, l) = (g.col_rows(), g.col_cols());
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); weight.numel()];
    let mut db = vec![T::zero(); g.o];
    let mut col = vec![T::zero(); rows * l];
    let mut dcol = vec![T::zero(); rows * l];
    let in_stride = g.c * g.h * g.w;
    for n in 0..g.n {
        let xn = &x.data()[n * in_stride..(n + 1) * in_stride];
        let gn = &grad_out.data()[n * g.o * l..(n + 1) * g.o * l];
        for (o, chunk) in gn.chunks(l).enumerate() {
            db[o] = db[o] + chunk.iter().copied().sum::<T>();
        }
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut col);
            &col
        };
        // dW += dOut * col^T
        T::gemm(
            g.o,
            l,
            rows,
            T::one(),
            gn,
            l as isize,
            1,
            cols,
            1,
            l as isize,
            T::one(),
            &mut dw,
            rows as isize,
            1,
        );
        // dcol = W^T * dOut
        let dxn = &mut dx[n * in_stride..(n + 1) * in_stride];
        if g.is_pointwise() {
            T::gemm(
                rows,
                g.o,
                l,
                T::one(),
                weight.data(),
                1,
                rows as isize,
                gn,
                l as isize,
                1,
                T::zero(),
                dxn,
                l as isize,
                1,
            );
        } else {
            T::gemm(
                rows,
                g.o,
                l,
                T::one(),
                weight.data(),
                1,
                rows as isize,
                gn,
                l as isize,
                1,
                T::zero(),
                &mut dcol,
                l as isize,
                1,
            );
            col2im_add(&g, &dcol, dxn);
        }
    }
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(weight.shape(), dw)?,
        Tensor::new(&[g.o], db)?,
    ))
}

/// Half-open window `[floor(i*len/bins), floor((i+1)*len/bins))`.
#[inline]
pub fn pool_window(i: usize, len: usize, bins: usize) -> (usize, usize) {
    (i * len / bins, (i + 1) * len / bins)
}

fn check_bins(shape: &[usize], bins: (usize, usize)) -> Result<(usize, usize, usize, usize)> {
    let [n, c, h, w] = shape[..] else {
        return Err(dim_err!("avg pool input must be NCHW, got {:?}", shape));
    };
    if bins.0 == 0 || bins.1 == 0 || bins.0 > h || bins.1 > w {
        return Err(dim_err!(
            "pool bins {:?} must lie within spatial extent H={} W={}",
            bins,
            h,
            w
        ));
    }
    Ok((n, c, h, w))
}

pub fn adaptive_avg_pool_forward<T: Scalar>(
    x: &Tensor<T>,
    bins: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_bins(x.shape(), bins)?;
    let (bh, bw) = bins;
    let mut out = Vec::with_capacity(n * c * bh * bw);
    for plane in x.data().chunks(h * w) {
        for i in 0..bh {
            let (y0, y1) = pool_window(i, h, bh);
            for j in 0..bw {
                let (x0, x1) = pool_window(j, w, bw);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc = acc + *v;
                    }
                }
                out.push(acc / T::lit(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::new(&[n, c, bh, bw], out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    bins: (usize, usize),
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = check_bins(input_shape, bins)?;
    let (bh, bw) = bins;
    let mut dx = Tensor::zeros(input_shape);
    for (plane, gplane) in dx
        .data_mut()
        .chunks_mut(h * w)
        .zip(grad_out.data().chunks(bh * bw))
    {
        for i in 0..bh {
            let (y0, y1) = pool_window(i, h, bh);
            for j in 0..bw {
                let (x0, x1) = pool_window(j, w, bw);
                let share = gplane[i * bw + j] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for v in &mut plane[y * w + x0..y * w + x1] {
                        *v = *v + share;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// `out[n, c, r*Y+dy, r*X+dx] = in[n, c*r*r + dy*r + dx, Y, X]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(dim_err!(
            "pixel shuffle needs C divisible by r^2: C={} r={}",
            c,
            r
        ));
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for b in 0..n {
        for oc in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    let plane = &src[((b * c + ic) * h) * w..((b * c + ic) * h + h) * w];
                    for y in 0..h {
                        let orow = ((b * co + oc) * ho + r * y + dy) * wo;
                        for xx in 0..w {
                            out[orow + r * xx + dx] = plane[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, co, ho, wo], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(dim_err!(
            "pixel unshuffle needs H and W divisible by r: H={} W={} r={}",
            h,
            w,
            r
        ));
    }
    let ci = c * r * r;
    let (hi, wi) = (h / r, w / r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for b in 0..n {
        for oc in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = oc * r * r + dy * r + dx;
                    let base = ((b * ci + ic) * hi) * wi;
                    for y in 0..hi {
                        let srow = ((b * c + oc) * h + r * y + dy) * w;
                        for xx in 0..wi {
                            out[base + y * wi + xx] = src[srow + r * xx + dx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, ci, hi, wi], out)
}

/// Per-destination `(i0, i1, frac)` taps for half-pixel-centred linear
/// interpolation along one axis.
pub fn linear_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn bilinear_forward<T: Scalar>(x: &Tensor<T>, out_hw: (usize, usize)) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = out_hw;
    if ho == 0 || wo == 0 {
        return Err(dim_err!("bilinear target extent must be >= 1, got {:?}", out_hw));
    }
    let ty = linear_taps(h, ho);
    let tx = linear_taps(w, wo);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for &(x0, x1, fx) in &tx {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let top = gx * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bot = gx * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                out.push(gy * top + fy * bot);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

pub fn bilinear_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, _, h, w] = input_shape[..] else {
        return Err(dim_err!("bilinear input must be NCHW"));
    };
    let (_, _, ho, wo) = grad_out.dims4()?;
    let ty = linear_taps(h, ho);
    let tx = linear_taps(w, wo);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, gplane) in dx
        .data_mut()
        .chunks_mut(h * w)
        .zip(grad_out.data().chunks(ho * wo))
    {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let g = gplane[oy * wo + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + g * gy * gx;
                plane[y0 * w + x1] = plane[y0 * w + x1] + g * gy * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + g * fy * gx;
                plane[y1 * w + x1] = plane[y1 * w + x1] + g * fy * fx;
            }
        }
    }
    Ok(dx)
}

/// Stack rank-4 tensors along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| dim_err!("channel concat needs at least one operand"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(dim_err!(
                "channel concat needs identical N,H,W: {:?} vs {:?}",
                (n, h, w),
                (pn, ph, pw)
            ));
        }
        total_c += pc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for b in 0..n {
        for p in parts {
            let per = p.shape()[1] * h * w;
            out.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::new(&[n, total_c, h, w], out)
}

/// Slice channels `[start, start + len)` of a rank-4 tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if start + len > c {
        return Err(dim_err!(
            "channel slice [{}, {}) out of range for C={}",
            start,
            start + len,
            c
        ));
    }
    let mut out = Vec::with_capacity(n * len * h * w);
    for b in 0..n {
        let base = (b * c + start) * h * w;
        out.extend_from_slice(&x.data()[base..base + len * h * w]);
    }
    Tensor::new(&[n, len, h, w], out)
}

/// Spatial crop `[top, top+h) x [left, left+w)` of a rank-4 tensor.
pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, hw: (usize, usize)) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ch, cw) = hw;
    if top + ch > h || left + cw > w {
        return Err(dim_err!(
            "crop {}x{} at ({}, {}) exceeds extent {}x{}",
            ch,
            cw,
            top,
            left,
            h,
            w
        ));
    }
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for plane in x.data().chunks(h * w) {
        for y in top..top + ch {
            out.extend_from_slice(&plane[y * w + left..y * w + left + cw]);
        }
    }
    Tensor::new(&[n, c, ch, cw], out)
}

/// Reflect-pad (mirror without repeating the border sample) on the bottom
/// and right edges.
pub fn reflect_pad_br<T: Scalar>(x: &Tensor<T>, extra_h: usize, extra_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if (extra_h > 0 && extra_h >= h) || (extra_w > 0 && extra_w >= w) {
        return Err(dim_err!(
            "reflect pad of ({}, {}) needs extents larger than the pad, got {}x{}",
            extra_h,
            extra_w,
            h,
            w
        ));
    }
    let (ho, wo) = (h + extra_h, w + extra_w);
    let reflect = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for y in 0..ho {
            let sy = reflect(y, h);
            for xx in 0..wo {
                out.push(plane[sy * w + reflect(xx, w)]);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}
