use std::ops::Deref;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Planar floating-point image with 1 or 3 channels, nominally in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Channel(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(dim_err!(
                "{}x{}x{} image needs {} samples, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            ));
        }
        Ok(ImageBuffer {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        ImageBuffer {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// What an 8-bit export followed by a reload would produce.
    pub fn quantized(&self) -> Self {
        self.map(|v| quantize_u8(v) as f32 / 255.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Size(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{} image",
                height, width, top, left, self.height, self.width
            )));
        }
        Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        })
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.channels, self.height, self.width], |i| {
            T::lit(self.data[i] as f64)
        })
    }

    /// Image `index` of a rank-4 batch, without clamping.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return Err(dim_err!("batch index {} out of range for N={}", index, n));
        }
        let per = c * h * w;
        let data = t.data()[index * per..(index + 1) * per]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Self::new(c, h, w, data)
    }
}

/// Round-half-up 8-bit quantisation of a `[0,1]` sample.
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Single floating-point plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err!(
                "{}x{} plane needs {} samples, got {}",
                height,
                width,
                height * width,
                data.len()
            ));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

/// Single-channel edge map in `[0,1]`. Canny output is binary; network
/// output is soft.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap(Plane);

impl EdgeMap {
    pub fn new(plane: Plane) -> Self {
        EdgeMap(plane)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        EdgeMap(Plane::filled(height, width, value))
    }

    pub fn from_image(img: &ImageBuffer) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::Channel(format!(
                "edge maps are single-channel, got {} channels",
                img.channels()
            )));
        }
        Ok(EdgeMap(img.channel_plane(0)))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.0.height, self.0.width], |i| {
            T::lit(self.0.data[i] as f64)
        })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        Self::from_image(&ImageBuffer::from_tensor(t, index)?)
    }
}

impl Deref for EdgeMap {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}
