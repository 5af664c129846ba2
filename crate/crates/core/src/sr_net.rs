//! EDSR*: residual trunk plus a pyramid-pooling pixel-shuffle upsampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::layers::{Conv, ResBlock};
use crate::autodiff::{Bound, ParamSet, Scalar, Tape, Var};
use crate::config::SrConfig;
use crate::error::{Error, Result};
use crate::imageproc::ImageBuffer;

/// Multi-bin average pooling branches concatenated onto the input and fused
/// back to its width.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidPool {
    pub feats: usize,
    pub bins: Vec<usize>,
    pub branches: Vec<Conv>,
    pub fuse: Conv,
    /// Clamp each bin to the map extent instead of rejecting small maps.
    pub saturate: bool,
}

impl PyramidPool {
    pub fn new(name: &str, feats: usize, bins: &[usize], saturate: bool) -> Result<Self> {
        if bins.is_empty() || feats % bins.len() != 0 {
            return Err(Error::Config(format!(
                "pyramid pool width {feats} is not divisible by {} bins",
                bins.len()
            )));
        }
        let bw = feats / bins.len();
        Ok(PyramidPool {
            feats,
            bins: bins.to_vec(),
            branches: bins
                .iter()
                .map(|b| Conv::same(format!("{name}.bin{b}"), feats, bw, 1))
                .collect(),
            fuse: Conv::same(format!("{name}.fuse"), feats + bw * bins.len(), feats, 1),
            saturate,
        })
    }

    pub fn concat_width(&self) -> usize {
        self.fuse.in_c
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(Conv::param_count).sum::<usize>() + self.fuse.param_count()
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) {
        for c in &self.branches {
            c.init(params, rng);
        }
        self.fuse.init(params, rng);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.feats {
            return Err(Error::Dimension(format!(
                "pyramid pool expects [N,{},H,W], got {:?}",
                self.feats, shape
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        let largest = *self.bins.iter().max().unwrap_or(&1);
        if !self.saturate && (h < largest || w < largest) {
            return Err(Error::Dimension(format!(
                "pyramid pool needs spatial extent >= {largest}, got {h}x{w}"
            )));
        }
        let mut parts = vec![x];
        for (b, conv) in self.bins.iter().zip(&self.branches) {
            let pooled = tape.adaptive_avg_pool2d(x, ((*b).min(h), (*b).min(w)))?;
            let y = conv.forward(tape, p, pooled)?;
            parts.push(tape.bilinear_upsample(y, (h, w))?);
        }
        let cat = tape.concat(&parts)?;
        self.fuse.forward(tape, p, cat)
    }
}

/// Pyramid pooling followed by log2(scale) conv + pixel-shuffle doublings.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleHead {
    pub pool: PyramidPool,
    pub stages: Vec<Conv>,
}

impl UpsampleHead {
    pub fn new(name: &str, feats: usize, scale: usize, bins: &[usize]) -> Result<Self> {
        if ![2, 4, 8].contains(&scale) {
            return Err(Error::Config(format!("scale must be 2, 4 or 8, got {scale}")));
        }
        let n = scale.trailing_zeros() as usize;
        Ok(UpsampleHead {
            pool: PyramidPool::new(&format!("{name}.pool"), feats, bins, false)?,
            stages: (0..n)
                .map(|i| Conv::same(format!("{name}.up{i}"), feats, 4 * feats, 3))
                .collect(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.pool.param_count() + self.stages.iter().map(Conv::param_count).sum::<usize>()
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) {
        self.pool.init(params, rng);
        for c in &self.stages {
            c.init(params, rng);
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = self.pool.forward(tape, p, x)?;
        for c in &self.stages {
            h = c.forward(tape, p, h)?;
            h = tape.pixel_shuffle(h, 2)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrNet {
    pub cfg: SrConfig,
    pub head: Conv,
    pub body: Vec<ResBlock>,
    pub body_tail: Conv,
    pub up: UpsampleHead,
    pub tail: Conv,
}

impl SrNet {
    pub fn new(cfg: &SrConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.n_feats;
        Ok(SrNet {
            cfg: cfg.clone(),
            head: Conv::same("sr.head", 3, f, 3),
            body: (0..cfg.n_resblocks)
                .map(|i| ResBlock::new(&format!("sr.body{i}"), f, cfg.res_scale))
                .collect(),
            body_tail: Conv::same("sr.body_tail", f, f, 3),
            up: UpsampleHead::new("sr.up", f, cfg.scale, &cfg.pyramid_bins)?,
            tail: Conv::same("sr.tail", f, 3, 3),
        })
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count()
            + self.body.iter().map(ResBlock::param_count).sum::<usize>()
            + self.body_tail.param_count()
            + self.up.param_count()
            + self.tail.param_count()
    }

    /// Seeded initial parameters.
    pub fn init(&self, seed: u64) -> ParamSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.head.init(&mut p, &mut rng);
        for b in &self.body {
            b.init(&mut p, &mut rng);
        }
        self.body_tail.init(&mut p, &mut rng);
        self.up.init(&mut p, &mut rng);
        self.tail.init_zero(&mut p);
        p
    }

    /// Head features and the long-skip trunk output.
    pub fn trunk<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Dimension(format!("sr net expects [N,3,H,W], got {shape:?}")));
        }
        let head = self.head.forward(tape, p, x)?;
        let mut h = head;
        for b in &self.body {
            h = b.forward(tape, p, h)?;
        }
        let h = self.body_tail.forward(tape, p, h)?;
        let trunk = tape.add(head, h)?;
        Ok((head, trunk))
    }

    /// Unclamped `[N,3,sH,sW]` output.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let (_, trunk) = self.trunk(tape, p, x)?;
        let up = self.up.forward(tape, p, trunk)?;
        self.tail.forward(tape, p, up)
    }

    /// Upscale one image; the result is clamped to [0,1].
    pub fn infer(&self, params: &ParamSet<f32>, lr: &ImageBuffer) -> Result<ImageBuffer> {
        if lr.channels() != 3 {
            return Err(Error::Channel(format!("sr net needs an RGB image, got {} channel(s)", lr.channels())));
        }
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let x = tape.constant(lr.to_tensor());
        let y = self.forward(&mut tape, &p, x)?;
        let out = ImageBuffer::from_tensor(tape.value(y), 0)?;
        if !out.is_finite() {
            return Err(Error::Numerical("sr output contains non-finite values".into()));
        }
        Ok(out.clamped())
    }
}

/// Upscale `lr` by `cfg.scale`.
pub fn edsr_star_forward(lr: &ImageBuffer, cfg: &SrConfig, params: &ParamSet<f32>) -> Result<ImageBuffer> {
    SrNet::new(cfg)?.infer(params, lr)
}
