//! Aligned patch sampling, augmentation and on-disk training sets.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EdgeNetConfig, Module};
use crate::edge_net::make_edge_target;
use crate::error::{Error, Result};
use crate::imageproc::{load_png, EdgeMap, ImageBuffer};

/// Rotation by `rot90` quarter turns (counter-clockwise), then optional
/// horizontal and vertical flips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Augment {
    pub rot90: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        rot90: 0,
        hflip: false,
        vflip: false,
    };

    pub fn random(rng: &mut impl Rng) -> Self {
        Augment {
            rot90: rng.random_range(0..4),
            hflip: rng.random(),
            vflip: rng.random(),
        }
    }

    /// Source coordinate for output `(y, x)` of an `h x w` input.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.out_hw(h, w);
        let y = if self.vflip { oh - 1 - y } else { y };
        let x = if self.hflip { ow - 1 - x } else { x };
        match self.rot90 % 4 {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.rot90 % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let (h, w) = img.hw();
        let (oh, ow) = self.out_hw(h, w);
        ImageBuffer::from_fn(img.channels(), oh, ow, |c, y, x| {
            let (sy, sx) = self.source(y, x, h, w);
            img.get(c, sy, sx)
        })
        .expect("augmentation preserves a valid channel count")
    }

    pub fn all() -> impl Iterator<Item = Augment> {
        (0..8u8).map(|i| Augment {
            rot90: i % 4,
            hflip: i & 4 != 0,
            vflip: false,
        })
    }

    /// Transform that undoes `self`, found by search over the eight
    /// symmetries of the square.
    pub fn inverse(&self) -> Augment {
        let probe = ImageBuffer::from_fn(1, 2, 3, |_, y, x| (y * 3 + x) as f32).expect("valid probe");
        let moved = self.apply(&probe);
        Augment::all()
            .find(|b| b.apply(&moved) == probe)
            .expect("the symmetry group is closed under inversion")
    }
}

/// Provenance of one training sample.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleRecord {
    pub image_id: String,
    /// Patch origin in low-resolution coordinates.
    pub lr_origin: (usize, usize),
    pub scale: usize,
    pub augment: Augment,
}

impl SampleRecord {
    pub fn hr_origin(&self) -> (usize, usize) {
        (self.scale * self.lr_origin.0, self.scale * self.lr_origin.1)
    }
}

/// Deterministic per-sample generator from `(seed, step, slot)`.
pub fn sample_rng(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&slot.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Crop `patch` pixels (times each image's factor) at one random origin
/// from every image and apply one random augmentation to all of them.
/// Images are given with their resolution factor relative to the first.
pub fn sample_aligned(
    images: &[(&ImageBuffer, usize)],
    patch: usize,
    augment: bool,
    image_id: &str,
    rng: &mut impl Rng,
) -> Result<(Vec<ImageBuffer>, SampleRecord)> {
    let (base, _) = images
        .first()
        .ok_or_else(|| Error::Data("no images to sample from".into()))?;
    let (h, w) = base.hw();
    for (img, f) in images {
        if img.hw() != (h * f, w * f) {
            return Err(Error::Size(format!(
                "image '{image_id}': {:?} is not {}x the base extent {:?}",
                img.hw(),
                f,
                (h, w)
            )));
        }
    }
    if h < patch || w < patch {
        return Err(Error::Size(format!(
            "image '{image_id}' ({h}x{w}) is smaller than the {patch}x{patch} patch"
        )));
    }
    let oy = rng.random_range(0..=h - patch);
    let ox = rng.random_range(0..=w - patch);
    let aug = if augment {
        Augment::random(rng)
    } else {
        Augment::IDENTITY
    };
    let crops = images
        .iter()
        .map(|(img, f)| img.crop(oy * f, ox * f, patch * f, patch * f).map(|c| aug.apply(&c)))
        .collect::<Result<Vec<_>>>()?;
    let scale = images.last().map_or(1, |(_, f)| *f);
    Ok((
        crops,
        SampleRecord {
            image_id: image_id.to_string(),
            lr_origin: (oy, ox),
            scale,
            augment: aug,
        },
    ))
}

/// Aligned low/high-resolution patches with random augmentation.
pub fn sample_patch_pair(
    lr: &ImageBuffer,
    hr: &ImageBuffer,
    scale: usize,
    lr_patch: usize,
    rng: &mut impl Rng,
) -> Result<(ImageBuffer, ImageBuffer, SampleRecord)> {
    let (mut v, rec) = sample_aligned(&[(lr, 1), (hr, scale)], lr_patch, true, "", rng)?;
    let hr_p = v.pop().unwrap();
    let lr_p = v.pop().unwrap();
    Ok((lr_p, hr_p, rec))
}

/// One training example, all images aligned; factors are relative to
/// `images[0]`.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub images: Vec<(ImageBuffer, usize)>,
}

/// In-memory training set for one module.
///
/// - sr: `(lr, hr)`
/// - edge: `(hr, binary target, soft target)`
/// - merge: `(sr, edge, hr)`
#[derive(Clone, Debug)]
pub struct TrainData {
    pub module: Module,
    pub examples: Vec<Example>,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(names)
}

fn load_matching(dir: &Path, names: &[String]) -> Result<Vec<ImageBuffer>> {
    names.iter().map(|n| load_png(dir.join(n))).collect()
}

fn rgb(img: ImageBuffer, path: PathBuf) -> Result<ImageBuffer> {
    if img.channels() == 3 {
        Ok(img)
    } else {
        Err(Error::Channel(format!("{} must be RGB", path.display())))
    }
}

impl TrainData {
    /// Directory layout:
    ///
    /// - `HR/` ground truth (all modules)
    /// - `LR_x{s}/` degraded inputs (sr)
    /// - `SR_x{s}/`, `EDGE_x{s}/` frozen stage outputs (merge)
    pub fn load(module: Module, dir: impl AsRef<Path>, scale: usize, edge_cfg: &EdgeNetConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let hr_dir = dir.join("HR");
        let names = png_names(&hr_dir)?;
        let hrs = load_matching(&hr_dir, &names)?
            .into_iter()
            .zip(&names)
            .map(|(img, n)| rgb(img, hr_dir.join(n)))
            .collect::<Result<Vec<_>>>()?;
        let examples = match module {
            Module::Sr => {
                let lr_dir = dir.join(format!("LR_x{scale}"));
                let lrs = load_matching(&lr_dir, &names)?;
                names
                    .iter()
                    .zip(lrs.into_iter().zip(hrs))
                    .map(|(n, (lr, hr))| Example {
                        id: n.clone(),
                        images: vec![(lr, 1), (hr, scale)],
                    })
                    .collect()
            }
            Module::Edge => names
                .iter()
                .zip(hrs)
                .map(|(n, hr)| Self::edge_example(n, hr, edge_cfg))
                .collect::<Result<_>>()?,
            Module::Merge => {
                let sr_dir = dir.join(format!("SR_x{scale}"));
                let edge_dir = dir.join(format!("EDGE_x{scale}"));
                let srs = load_matching(&sr_dir, &names)?;
                let edges = load_matching(&edge_dir, &names)?;
                let mut out = Vec::new();
                for (i, ((sr, edge), hr)) in srs.into_iter().zip(edges).zip(hrs).enumerate() {
                    let sr = rgb(sr, sr_dir.join(&names[i]))?;
                    let edge = EdgeMap::from_image(&edge)?;
                    out.push(Example {
                        id: names[i].clone(),
                        images: vec![(sr, 1), (edge.plane().to_image(), 1), (hr, 1)],
                    });
                }
                out
            }
        };
        Ok(TrainData { module, examples })
    }

    pub fn edge_example(id: &str, hr: ImageBuffer, cfg: &EdgeNetConfig) -> Result<Example> {
        let (bin, soft) = make_edge_target(&hr, cfg)?;
        Ok(Example {
            id: id.to_string(),
            images: vec![(hr, 1), (bin.plane().to_image(), 1), (soft.plane().to_image(), 1)],
        })
    }

    /// Smallest extent of the base image across examples.
    pub fn min_extent(&self) -> usize {
        self.examples
            .iter()
            .map(|e| {
                let (h, w) = e.images[0].0.hw();
                h.min(w)
            })
            .min()
            .unwrap_or(0)
    }

    /// One sample for `(seed, step, slot)`.
    pub fn sample(&self, patch: usize, augment: bool, seed: u64, step: u64, slot: u64) -> Result<(Vec<ImageBuffer>, SampleRecord)> {
        if self.examples.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut rng = sample_rng(seed, step, slot);
        let ex = &self.examples[rng.random_range(0..self.examples.len())];
        let refs: Vec<(&ImageBuffer, usize)> = ex.images.iter().map(|(i, f)| (i, *f)).collect();
        sample_aligned(&refs, patch, augment, &ex.id, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(3, h, w, |c, y, x| (c * 100 + y * 10 + x) as f32 / 1000.0).unwrap()
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let img = ImageBuffer::from_fn(1, 2, 3, |_, y, x| (y * 3 + x) as f32).unwrap();
        let r = Augment {
            rot90: 1,
            ..Augment::IDENTITY
        }
        .apply(&img);
        assert_eq!(r.hw(), (3, 2));
        // top-right corner moves to top-left
        assert_eq!(r.get(0, 0, 0), 2.0);
        assert_eq!(r.get(0, 2, 1), 3.0);
    }

    #[test]
    fn every_augment_has_an_inverse() {
        let img = probe(4, 5);
        for rot90 in 0..4 {
            for hflip in [false, true] {
                for vflip in [false, true] {
                    let a = Augment { rot90, hflip, vflip };
                    assert_eq!(a.inverse().apply(&a.apply(&img)), img, "{a:?}");
                }
            }
        }
    }

    #[test]
    fn pair_alignment() {
        let lr = probe(96, 96);
        let hr = probe(192, 192);
        let mut rng = sample_rng(1, 0, 0);
        let (lp, hp, rec) = sample_patch_pair(&lr, &hr, 2, 48, &mut rng).unwrap();
        assert_eq!(lp.hw(), (48, 48));
        assert_eq!(hp.hw(), (96, 96));
        assert_eq!(rec.hr_origin(), (2 * rec.lr_origin.0, 2 * rec.lr_origin.1));
        let inv = rec.augment.inverse();
        let (hy, hx) = rec.hr_origin();
        assert_eq!(inv.apply(&hp), hr.crop(hy, hx, 96, 96).unwrap());
        let (ly, lx) = rec.lr_origin;
        assert_eq!(inv.apply(&lp), lr.crop(ly, lx, 48, 48).unwrap());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let lr = probe(30, 30);
        let hr = probe(60, 60);
        let run = || {
            (0..20)
                .map(|s| {
                    let mut rng = sample_rng(42, s, 0);
                    sample_patch_pair(&lr, &hr, 2, 8, &mut rng).unwrap().2
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn patch_larger_than_image() {
        let lr = probe(10, 10);
        let hr = probe(20, 20);
        let mut rng = sample_rng(0, 0, 0);
        assert!(matches!(sample_patch_pair(&lr, &hr, 2, 12, &mut rng), Err(Error::Size(_))));
    }
}
