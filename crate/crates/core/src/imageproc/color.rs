use crate::error::{Error, Result};

use super::{ImageBuffer, Plane};

const KR: f64 = 65.481;
const KG: f64 = 128.553;
const KB: f64 = 24.966;

/// BT.601 studio-swing luma on the 0-255 scale:
/// `Y = 16 + 65.481 R + 128.553 G + 24.966 B` for `R, G, B` in `[0,1]`.
pub fn rgb_to_y(img: &ImageBuffer) -> Result<Plane> {
    if img.channels() != 3 {
        return Err(Error::Channel(format!(
            "rgb_to_y needs a 3-channel image, got {}",
            img.channels()
        )));
    }
    let (h, w) = img.hw();
    let data = y_values(img).into_iter().map(|v| v as f32).collect();
    Plane::new(h, w, data)
}

fn y_values(img: &ImageBuffer) -> Vec<f64> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 16.0 + KR * r as f64 + KG * g as f64 + KB * b as f64)
        .collect()
}

/// Luma in double precision on the 0-255 scale, as used by the metrics.
/// A single-channel image is its own luma (`255 * v`).
pub fn luma_255(img: &ImageBuffer) -> Vec<f64> {
    if img.channels() == 3 {
        y_values(img)
    } else {
        img.data().iter().map(|&v| v as f64 * 255.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(r: f32, g: f32, b: f32) -> ImageBuffer {
        ImageBuffer::from_fn(3, 1, 1, |c, _, _| [r, g, b][c]).unwrap()
    }

    #[test]
    fn reference_colours() {
        assert_eq!(rgb_to_y(&solid(0.0, 0.0, 0.0)).unwrap().data[0], 16.0);
        assert!((rgb_to_y(&solid(1.0, 1.0, 1.0)).unwrap().data[0] - 235.0).abs() < 1e-4);
        assert!((rgb_to_y(&solid(1.0, 0.0, 0.0)).unwrap().data[0] - 81.481).abs() < 1e-4);
    }

    #[test]
    fn grey_input_is_a_channel_error() {
        let g = ImageBuffer::filled(1, 2, 2, 0.5).unwrap();
        assert!(matches!(rgb_to_y(&g), Err(Error::Channel(_))));
    }
}
