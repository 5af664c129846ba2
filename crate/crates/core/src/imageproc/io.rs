use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use log::warn;

use crate::error::{Error, Result};

use super::buffer::quantize_u8;
use super::{EdgeMap, ImageBuffer};

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Load an 8-bit PNG as a `[0,1]` image. Alpha is dropped with a warning.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| codec_err(path, e))?;
    if img.color().has_alpha() {
        warn!("{}: dropping alpha channel", path.display());
    }
    let is_grey = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_)
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    if is_grey {
        let g = img.to_luma8();
        let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        ImageBuffer::new(1, h, w, data)
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        ImageBuffer::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }
}

/// Write an image as 8-bit PNG (clamped, round-half-up).
pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.hw();
    let result = if img.channels() == 1 {
        let raw = img.data().iter().map(|&v| quantize_u8(v)).collect();
        GrayImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer size matches")
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        let mut raw = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    raw.push(quantize_u8(img.get(c, y, x)));
                }
            }
        }
        RgbImage::from_raw(w as u32, h as u32, raw)
            .expect("buffer size matches")
            .save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| codec_err(path, e))
}

pub fn save_edge_png(edge: &EdgeMap, path: impl AsRef<Path>) -> Result<()> {
    save_png(&edge.to_image(), path)
}
