//! DenseEdgeNet: dense-residual backbone, densely fused side outputs with
//! pyramid-pooling pixel-shuffle upsamplers, short connections, and the
//! two-branch multi-complexity ensemble.

use std::fmt::Display;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels::reflect_pad_br;
use crate::autodiff::layers::{Conv, ResBlock};
use crate::autodiff::{Bound, ParamSet, Scalar, Tape, Tensor, Var};
use crate::config::EdgeNetConfig;
use crate::error::{Error, Result};
use crate::imageproc::{canny_relative, gaussian_blur, rgb_to_y, EdgeMap, ImageBuffer, Plane};
use crate::sr_net::PyramidPool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Sigmoid output trained with BCE on binary edges.
    Classifier,
    /// Clamped output trained with l1 on blurred edges.
    Regressor,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Classifier, Branch::Regressor];
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(Branch::Classifier),
            "regressor" => Ok(Branch::Regressor),
            _ => Err(Error::Config(format!("unknown edge branch '{s}' (classifier|regressor)"))),
        }
    }
}

impl Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Branch::Classifier => "classifier",
            Branch::Regressor => "regressor",
        })
    }
}

/// Residual block whose input is a 1x1 projection of `x` concatenated with
/// earlier features.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseResBlock {
    pub x_width: usize,
    pub prior_widths: Vec<usize>,
    pub proj: Option<Conv>,
    pub body: ResBlock,
}

impl DenseResBlock {
    pub fn new(name: &str, x_width: usize, prior_widths: &[usize], width: usize) -> Self {
        let total = x_width + prior_widths.iter().sum::<usize>();
        let proj = (total != width || !prior_widths.is_empty())
            .then(|| Conv::same(format!("{name}.proj"), total, width, 1));
        DenseResBlock {
            x_width,
            prior_widths: prior_widths.to_vec(),
            proj,
            body: ResBlock::new(name, width, 1.0),
        }
    }

    pub fn width(&self) -> usize {
        self.body.conv1.in_c
    }

    pub fn param_count(&self) -> usize {
        self.proj.as_ref().map_or(0, Conv::param_count) + self.body.param_count()
    }

    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) {
        if let Some(p) = &self.proj {
            p.init(params, rng);
        }
        self.body.init(params, rng);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, priors: &[Var]) -> Result<Var> {
        if priors.len() != self.prior_widths.len() {
            return Err(Error::Dimension(format!(
                "dense block expects {} prior features, got {}",
                self.prior_widths.len(),
                priors.len()
            )));
        }
        let xs = tape.shape(x).to_vec();
        for &v in priors {
            let s = tape.shape(v);
            if s.len() != 4 || s[0] != xs[0] || s[2..] != xs[2..] {
                return Err(Error::Dimension(format!(
                    "dense block inputs must share N,H,W: {xs:?} vs {s:?}"
                )));
            }
        }
        let input = match &self.proj {
            None => x,
            Some(proj) => {
                let mut parts = vec![x];
                parts.extend_from_slice(priors);
                let cat = tape.concat(&parts)?;
                proj.forward(tape, p, cat)?
            }
        };
        self.body.forward(tape, p, input)
    }
}

/// One stage's 1-channel prediction head at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SideOutput {
    pub stage: usize,
    pub proj: Conv,
    /// Fusion with the earlier sides (absent for the first stage).
    pub fuse: Option<Conv>,
    /// One pyramid pool + conv + pixel shuffle per doubling.
    pub ups: Vec<(PyramidPool, Conv)>,
}

impl SideOutput {
    fn new(cfg: &EdgeNetConfig, stage: usize) -> Result<Self> {
        let name = format!("edge.side{stage}");
        let sw = cfg.side_width;
        if stage == 0 {
            return Ok(SideOutput {
                stage,
                proj: Conv::same(format!("{name}.proj"), cfg.stage_width(0), 1, 1),
                fuse: None,
                ups: Vec::new(),
            });
        }
        let ups = (0..stage)
            .map(|i| {
                let out = if i + 1 == stage { 1 } else { sw };
                Ok((
                    PyramidPool::new(&format!("{name}.up{i}.pool"), sw, &cfg.side_bins, true)?,
                    Conv::same(format!("{name}.up{i}.conv"), sw, 4 * out, 3),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(SideOutput {
            stage,
            proj: Conv::same(format!("{name}.proj"), cfg.stage_width(stage), sw, 1),
            fuse: Some(Conv::same(format!("{name}.fuse"), sw + stage, sw, 1)),
            ups,
        })
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count()
            + self.fuse.as_ref().map_or(0, Conv::param_count)
            + self
                .ups
                .iter()
                .map(|(pp, c)| pp.param_count() + c.param_count())
                .sum::<usize>()
    }

    /// The conv producing the logits starts at zero, so every side begins at 0.5.
    fn init(&self, params: &mut ParamSet<f32>, rng: &mut ChaCha8Rng) {
        if self.ups.is_empty() {
            self.proj.init_zero(params);
        } else {
            self.proj.init(params, rng);
        }
        if let Some(f) = &self.fuse {
            f.init(params, rng);
        }
        let last = self.ups.len().saturating_sub(1);
        for (i, (pp, c)) in self.ups.iter().enumerate() {
            pp.init(params, rng);
            if i == last {
                c.init_zero(params);
            } else {
                c.init(params, rng);
            }
        }
    }

    /// Logits at `out_hw` from a stage feature and the shallower sides
    /// (already at `out_hw`).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        feat: Var,
        earlier: &[Var],
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let mut h = self.proj.forward(tape, p, feat)?;
        if let Some(fuse) = &self.fuse {
            let s = tape.shape(feat);
            let extent = (s[2], s[3]);
            let mut parts = vec![h];
            for &e in earlier {
                parts.push(tape.adaptive_avg_pool2d(e, extent)?);
            }
            let cat = tape.concat(&parts)?;
            h = fuse.forward(tape, p, cat)?;
        }
        for (pool, conv) in &self.ups {
            h = pool.forward(tape, p, h)?;
            h = conv.forward(tape, p, h)?;
            h = tape.pixel_shuffle(h, 2)?;
        }
        let s = tape.shape(h);
        if (s[2], s[3]) != out_hw {
            h = tape.bilinear_upsample(h, out_hw)?;
        }
        Ok(h)
    }
}

/// Intermediate logits of one forward pass.
#[derive(Clone, Debug)]
pub struct EdgeLogits {
    pub stages: Vec<Var>,
    pub sides: Vec<Var>,
    pub refined: Vec<Var>,
    pub fused: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeNet {
    pub cfg: EdgeNetConfig,
    pub stem: Conv,
    pub transitions: Vec<Conv>,
    pub stages: Vec<Vec<DenseResBlock>>,
    pub sides: Vec<SideOutput>,
    /// Short connections for every side but the deepest.
    pub short: Vec<Conv>,
    pub fuse: Conv,
}

impl EdgeNet {
    pub fn new(cfg: &EdgeNetConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_stages;
        let transitions = (1..n)
            .map(|c| Conv::strided(format!("edge.down{c}"), cfg.stage_width(c - 1), cfg.stage_width(c), 3, 2))
            .collect();
        let stages = (0..n)
            .map(|c| {
                let w = cfg.stage_width(c);
                (0..cfg.blocks_per_stage)
                    .map(|j| DenseResBlock::new(&format!("edge.stage{c}.block{j}"), w, &vec![w; j], w))
                    .collect()
            })
            .collect();
        let sides = (0..n).map(|s| SideOutput::new(cfg, s)).collect::<Result<_>>()?;
        let short = (0..n - 1)
            .map(|i| Conv::same(format!("edge.short{i}"), n - i, 1, 1))
            .collect();
        Ok(EdgeNet {
            cfg: cfg.clone(),
            stem: Conv::same("edge.stem", 3, cfg.stage_width(0), 3),
            transitions,
            stages,
            sides,
            short,
            fuse: Conv::same("edge.fuse", n, 1, 1),
        })
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.transitions.iter().map(Conv::param_count).sum::<usize>()
            + self.stages.iter().flatten().map(DenseResBlock::param_count).sum::<usize>()
            + self.sides.iter().map(SideOutput::param_count).sum::<usize>()
            + self.short.iter().map(Conv::param_count).sum::<usize>()
            + self.fuse.param_count()
    }

    /// Seeded initial parameters. Short connections start as the identity
    /// on their own side and the final fusion as the mean of all sides.
    pub fn init(&self, seed: u64) -> ParamSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.stem.init(&mut p, &mut rng);
        for t in &self.transitions {
            t.init(&mut p, &mut rng);
        }
        for b in self.stages.iter().flatten() {
            b.init(&mut p, &mut rng);
        }
        for s in &self.sides {
            s.init(&mut p, &mut rng);
        }
        for c in &self.short {
            let mut w = Tensor::zeros(&c.weight_shape());
            w.data_mut()[0] = 1.0;
            p.insert(c.weight_name(), w);
            p.insert(c.bias_name(), Tensor::zeros(&[1]));
        }
        let k = self.fuse.in_c;
        p.insert(self.fuse.weight_name(), Tensor::full(&self.fuse.weight_shape(), 1.0 / k as f32));
        p.insert(self.fuse.bias_name(), Tensor::zeros(&[1]));
        p
    }

    /// Five stage features; `x` extents must be multiples of 16.
    pub fn backbone<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let s = tape.shape(x).to_vec();
        let m = self.cfg.extent_multiple();
        if s.len() != 4 || s[1] != 3 || s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::Dimension(format!(
                "edge backbone expects [N,3,H,W] with H and W positive multiples of {m}, got {s:?}"
            )));
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut h = self.stem.forward(tape, p, x)?;
        for (c, blocks) in self.stages.iter().enumerate() {
            if c > 0 {
                h = self.transitions[c - 1].forward(tape, p, h)?;
            }
            let t = h;
            let mut outs: Vec<Var> = Vec::new();
            for (j, block) in blocks.iter().enumerate() {
                let mut priors = vec![];
                if j > 0 {
                    priors.push(t);
                    priors.extend_from_slice(&outs[..j - 1]);
                }
                h = block.forward(tape, p, h, &priors)?;
                outs.push(h);
            }
            feats.push(h);
        }
        Ok(feats)
    }

    pub fn short_connection_fuse<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, sides: &[Var]) -> Result<Vec<Var>> {
        if sides.len() != self.sides.len() {
            return Err(Error::Dimension(format!("expected {} sides, got {}", self.sides.len(), sides.len())));
        }
        let mut refined = Vec::with_capacity(sides.len());
        for (i, conv) in self.short.iter().enumerate() {
            let cat = tape.concat(&sides[i..])?;
            refined.push(conv.forward(tape, p, cat)?);
        }
        refined.push(sides[sides.len() - 1]);
        Ok(refined)
    }

    pub fn fuse_final<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, refined: &[Var]) -> Result<Var> {
        let cat = tape.concat(refined)?;
        self.fuse.forward(tape, p, cat)
    }

    /// All logits for a batch whose extents are multiples of 16.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<EdgeLogits> {
        let stages = self.backbone(tape, p, x)?;
        let s = tape.shape(x);
        let out_hw = (s[2], s[3]);
        let mut sides = Vec::with_capacity(stages.len());
        for (head, &feat) in self.sides.iter().zip(&stages) {
            let side = head.forward(tape, p, feat, &sides, out_hw)?;
            sides.push(side);
        }
        let refined = self.short_connection_fuse(tape, p, &sides)?;
        let fused = self.fuse_final(tape, p, &refined)?;
        Ok(EdgeLogits {
            stages,
            sides,
            refined,
            fused,
        })
    }

    /// Deeply supervised training loss: the mean of the per-output losses
    /// over every refined side and the fused map. Classifier targets are
    /// binary and scored with BCE on logits; regressor targets are soft and
    /// scored with l1 on the raw output.
    pub fn loss<T: Scalar>(&self, tape: &mut Tape<T>, out: &EdgeLogits, branch: Branch, target: Var) -> Result<Var> {
        let mut terms = Vec::with_capacity(out.refined.len() + 1);
        for &v in out.refined.iter().chain(std::iter::once(&out.fused)) {
            terms.push(match branch {
                Branch::Classifier => tape.loss_bce_logits(v, target)?,
                Branch::Regressor => tape.loss_l1(v, target)?,
            });
        }
        let cat = terms[1..].iter().try_fold(terms[0], |acc, &t| tape.add(acc, t))?;
        Ok(tape.scale(cat, 1.0 / terms.len() as f64))
    }

    /// Edge map for an image of any extent >= 16: reflect-padded to a
    /// multiple of 16 on the bottom/right, cropped back afterwards.
    pub fn infer(&self, params: &ParamSet<f32>, img: &ImageBuffer, branch: Branch) -> Result<EdgeMap> {
        if img.channels() != 3 {
            return Err(Error::Channel(format!("edge net needs an RGB image, got {} channel(s)", img.channels())));
        }
        let (h, w) = img.hw();
        let m = self.cfg.extent_multiple();
        let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
        let padded = reflect_pad_br(&img.to_tensor::<f32>(), ph, pw)?;
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let x = tape.constant(padded);
        let out = self.forward(&mut tape, &p, x)?;
        let y = tape.crop(out.fused, 0, 0, (h, w))?;
        let y = match branch {
            Branch::Classifier => tape.sigmoid(y),
            Branch::Regressor => tape.clamp01(y),
        };
        let map = EdgeMap::from_tensor(tape.value(y), 0)?;
        if !map.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("edge output contains non-finite values".into()));
        }
        Ok(map)
    }
}

/// Edge map from one branch of one model.
pub fn dense_edge_forward(
    img: &ImageBuffer,
    branch: Branch,
    cfg: &EdgeNetConfig,
    params: &ParamSet<f32>,
) -> Result<EdgeMap> {
    EdgeNet::new(cfg)?.infer(params, img, branch)
}

/// Elementwise mean that is bitwise independent of input order and returns
/// the common value exactly when all inputs agree.
fn ordered_mean(maps: &[&EdgeMap]) -> Result<EdgeMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Dimension("cannot average an empty list of edge maps".into()))?;
    let hw = first.hw();
    if let Some(bad) = maps.iter().find(|m| m.hw() != hw) {
        return Err(Error::Dimension(format!(
            "edge maps must share extents: {:?} vs {:?}",
            hw,
            bad.hw()
        )));
    }
    let k = maps.len();
    let mut vals = vec![0f32; k];
    let data = (0..hw.0 * hw.1)
        .map(|i| {
            for (v, m) in vals.iter_mut().zip(maps) {
                *v = m.data[i];
            }
            vals.sort_by(f32::total_cmp);
            let lo = vals[0] as f64;
            let spread: f64 = vals.iter().map(|&v| v as f64 - lo).sum();
            (lo + spread / k as f64) as f32
        })
        .collect();
    Ok(EdgeMap::new(Plane::new(hw.0, hw.1, data)?))
}

/// Mean of the classifier and regressor maps.
pub fn branch_average(class_map: &EdgeMap, regr_map: &EdgeMap) -> Result<EdgeMap> {
    ordered_mean(&[class_map, regr_map])
}

/// Mean over the per-complexity maps.
pub fn multi_complexity_fuse(maps: &[EdgeMap]) -> Result<EdgeMap> {
    ordered_mean(&maps.iter().collect::<Vec<_>>())
}

/// Binary Canny target on the luma plane and its blurred, peak-normalised
/// counterpart.
pub fn make_edge_target(hr: &ImageBuffer, cfg: &EdgeNetConfig) -> Result<(EdgeMap, EdgeMap)> {
    let y = match hr.channels() {
        3 => rgb_to_y(hr)?,
        _ => hr.channel_plane(0),
    };
    let binary = canny_relative(&y, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)?;
    let blurred = gaussian_blur(binary.plane(), cfg.gt_sigma)?;
    let peak = blurred.max();
    let soft = if peak > 0.0 {
        blurred.map(|v| v / peak)
    } else {
        blurred
    };
    Ok((binary, EdgeMap::new(soft)))
}

/// One ensemble member: a stage-1 width with one or both trained branches.
#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub cfg: EdgeNetConfig,
    pub classifier: Option<ParamSet<f32>>,
    pub regressor: Option<ParamSet<f32>>,
}

/// Multi-complexity, two-branch edge ensemble.
#[derive(Clone, Debug, Default)]
pub struct EdgeEnsemble {
    pub members: Vec<EnsembleMember>,
}

impl EdgeEnsemble {
    pub fn predict(&self, img: &ImageBuffer) -> Result<EdgeMap> {
        if self.members.is_empty() {
            return Err(Error::Config("edge ensemble has no members".into()));
        }
        let mut per_member = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let net = EdgeNet::new(&m.cfg)?;
            let c = m.classifier.as_ref().map(|p| net.infer(p, img, Branch::Classifier)).transpose()?;
            let r = m.regressor.as_ref().map(|p| net.infer(p, img, Branch::Regressor)).transpose()?;
            per_member.push(match (c, r) {
                (Some(c), Some(r)) => branch_average(&c, &r)?,
                (Some(one), None) | (None, Some(one)) => one,
                (None, None) => {
                    return Err(Error::Config(format!("ensemble member nr={} has no branches", m.cfg.nr)))
                }
            });
        }
        multi_complexity_fuse(&per_member)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, GradCheckOptions};

    fn cfg(nr: usize) -> EdgeNetConfig {
        EdgeNetConfig {
            nr,
            ..EdgeNetConfig::default()
        }
    }

    fn rgb(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(3, h, w, |c, y, x| ((x * 7 + y * 3 + c * 5) % 13) as f32 / 13.0).unwrap()
    }

    #[test]
    fn backbone_extents_and_widths() {
        let net = EdgeNet::new(&cfg(8)).unwrap();
        let params = net.init(0);
        let mut tape = Tape::<f32>::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(rgb(64, 64).to_tensor());
        let feats = net.backbone(&mut tape, &b, x).unwrap();
        let shapes: Vec<_> = feats.iter().map(|&f| tape.shape(f).to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![1, 8, 64, 64],
                vec![1, 16, 32, 32],
                vec![1, 32, 16, 16],
                vec![1, 64, 8, 8],
                vec![1, 64, 4, 4]
            ]
        );
    }

    #[test]
    fn backbone_rejects_indivisible() {
        let net = EdgeNet::new(&cfg(4)).unwrap();
        let params = net.init(0);
        let mut tape = Tape::<f32>::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(rgb(24, 32).to_tensor());
        assert!(matches!(net.backbone(&mut tape, &b, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_input_is_finite() {
        let net = EdgeNet::new(&cfg(4)).unwrap();
        let params = net.init(2);
        let mut tape = Tape::<f32>::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::full(&[1, 3, 32, 32], 0.7));
        let out = net.forward(&mut tape, &b, x).unwrap();
        for &f in out.stages.iter().chain(&out.sides) {
            assert!(tape.value(f).is_finite());
        }
        for &s in &out.sides {
            assert_eq!(tape.shape(s), &[1, 1, 32, 32]);
        }
    }

    #[test]
    fn closed_form_param_count() {
        for nr in [4, 8, 16] {
            let c = cfg(nr);
            let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
            let widths: Vec<usize> = c.stage_mults.iter().map(|m| m * nr).collect();
            let sw = c.side_width;
            let pool = |f: usize| 4 * conv(f, f / 4, 1) + conv(2 * f, f, 1);
            let mut n = conv(3, widths[0], 3);
            for s in 1..5 {
                n += conv(widths[s - 1], widths[s], 3);
            }
            for &w in &widths {
                n += 2 * conv(w, w, 3);
                n += conv(2 * w, w, 1) + 2 * conv(w, w, 3);
            }
            n += conv(widths[0], 1, 1);
            for s in 1..5 {
                n += conv(widths[s], sw, 1) + conv(sw + s, sw, 1);
                for i in 0..s {
                    let out = if i + 1 == s { 1 } else { sw };
                    n += pool(sw) + conv(sw, 4 * out, 3);
                }
            }
            for i in 0..4 {
                n += conv(5 - i, 1, 1);
            }
            n += conv(5, 1, 1);
            let net = EdgeNet::new(&c).unwrap();
            assert_eq!(net.param_count(), n);
            assert_eq!(net.init(0).num_scalars(), n);
        }
    }

    #[test]
    fn dense_block_structure() {
        let plain = DenseResBlock::new("b", 8, &[], 8);
        assert!(plain.proj.is_none());
        let dense = DenseResBlock::new("d", 8, &[8, 16], 8);
        assert_eq!(dense.proj.as_ref().unwrap().in_c, 32);
        let mut params = ParamSet::new();
        dense.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::<f32>::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::full(&[1, 8, 6, 6], 0.1));
        let p1 = tape.constant(Tensor::full(&[1, 8, 6, 6], 0.2));
        let bad = tape.constant(Tensor::full(&[1, 16, 5, 6], 0.3));
        assert!(matches!(dense.forward(&mut tape, &b, x, &[p1, bad]), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_priors_is_plain_residual_block() {
        let d = DenseResBlock::new("b", 4, &[], 4);
        let mut params = ParamSet::new();
        d.init(&mut params, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::<f64>::new();
        let b = params.cast::<f64>().bind_frozen(&mut tape);
        let x = tape.constant(Tensor::from_fn(&[1, 4, 5, 5], |i| (i % 9) as f64 / 9.0));
        let y1 = d.forward(&mut tape, &b, x, &[]).unwrap();
        let y2 = d.body.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
    }

    #[test]
    fn short_connections_start_as_identity_and_fusion_as_mean() {
        let net = EdgeNet::new(&cfg(4)).unwrap();
        let params = net.init(3).cast::<f64>();
        let mut tape = Tape::<f64>::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(rgb(32, 32).to_tensor());
        let out = net.forward(&mut tape, &b, x).unwrap();
        for (s, r) in out.sides.iter().zip(&out.refined) {
            assert_eq!(tape.value(*s), tape.value(*r));
        }
        assert_eq!(tape.shape(out.refined[0]), &[1, 1, 32, 32]);
        let fused = tape.value(out.fused).data().to_vec();
        for (i, f) in fused.iter().enumerate() {
            let mean: f64 = out.refined.iter().map(|&r| tape.value(r).data()[i]).sum::<f64>() / 5.0;
            assert!((f - mean).abs() < 1e-6 * (1.0 + mean.abs()));
        }
    }

    #[test]
    fn zero_weights_give_half_probability() {
        let net = EdgeNet::new(&cfg(4)).unwrap();
        let mut params = net.init(0);
        for (_, t) in params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let map = net.infer(&params, &rgb(20, 27), Branch::Classifier).unwrap();
        assert_eq!(map.hw(), (20, 27));
        assert!(map.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn outputs_in_unit_range_with_input_extent() {
        let net = EdgeNet::new(&cfg(4)).unwrap();
        let params = net.init(9);
        for (h, w) in [(16, 16), (17, 23), (33, 40)] {
            for branch in Branch::ALL {
                let m = net.infer(&params, &rgb(h, w), branch).unwrap();
                assert_eq!(m.hw(), (h, w));
                assert!(m.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn averaging_examples() {
        let a = EdgeMap::filled(3, 3, 0.0);
        let b = EdgeMap::filled(3, 3, 1.0);
        let c = EdgeMap::filled(3, 3, 0.5);
        assert!(branch_average(&a, &b).unwrap().data.iter().all(|&v| v == 0.5));
        assert!(multi_complexity_fuse(&[a.clone(), c.clone(), b.clone()]).unwrap().data.iter().all(|&v| v == 0.5));
        assert_eq!(multi_complexity_fuse(std::slice::from_ref(&c)).unwrap(), c);
        assert!(matches!(
            branch_average(&a, &EdgeMap::filled(3, 4, 0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn edge_targets() {
        let c = EdgeNetConfig::default();
        let flat = ImageBuffer::filled(3, 24, 24, 0.4).unwrap();
        let (bin, soft) = make_edge_target(&flat, &c).unwrap();
        assert!(bin.data.iter().chain(&soft.data).all(|&v| v == 0.0));

        let step = ImageBuffer::from_fn(3, 24, 24, |_, _, x| if x >= 12 { 0.9 } else { 0.1 }).unwrap();
        let (bin, soft) = make_edge_target(&step, &c).unwrap();
        for y in 0..24 {
            let row: Vec<usize> = (0..24).filter(|&x| bin.get(y, x) == 1.0).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
        }
        assert_eq!(soft.max(), 1.0);
        let k = crate::imageproc::gaussian_kernel(c.gt_sigma);
        let centre = k[k.len() / 2];
        for i in 0..bin.data.len() {
            assert!(soft.data[i] as f64 >= bin.data[i] as f64 * centre * centre - 1e-6);
        }
    }

    #[test]
    fn gradcheck_both_branches() {
        let c = EdgeNetConfig {
            nr: 2,
            side_width: 4,
            blocks_per_stage: 2,
            ..EdgeNetConfig::default()
        };
        let net = EdgeNet::new(&c).unwrap();
        let params = crate::gradsuite::fill_zeros(net.init(4), 4).cast::<f64>();
        let input = Tensor::from_fn(&[1, 3, 16, 16], |i| ((i * 29) % 17) as f64 / 17.0);
        let target = Tensor::from_fn(&[1, 1, 16, 16], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        for branch in Branch::ALL {
            let report = grad_check_params(
                |tape, b| {
                    let x = tape.constant(input.clone());
                    let out = net.forward(tape, b, x)?;
                    let t = tape.constant(target.clone());
                    net.loss(tape, &out, branch, t)
                },
                &params,
                GradCheckOptions {
                    max_coords_per_tensor: 2,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{branch}: {report:?}");
        }
    }
}
