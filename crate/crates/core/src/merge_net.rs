//! MergeNet: fuses the super-resolved image with its edge map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::layers::{Conv, ResBlock};
use crate::autodiff::{Bound, ParamSet, Scalar, Tape, Var};
use crate::config::MergeConfig;
use crate::error::{Error, Result};
use crate::imageproc::{EdgeMap, ImageBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct MergeNet {
    pub cfg: MergeConfig,
    pub head: Conv,
    pub body: Vec<ResBlock>,
    pub body_tail: Conv,
    /// 1 -> n_feats embedding added to the trunk when the edge skip is on.
    pub edge_embed: Option<Conv>,
    pub tail: Conv,
}

impl MergeNet {
    pub fn new(cfg: &MergeConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.n_feats;
        Ok(MergeNet {
            cfg: cfg.clone(),
            head: Conv::same("merge.head", 4, f, 3),
            body: (0..cfg.n_resblocks)
                .map(|i| ResBlock::new(&format!("merge.body{i}"), f, cfg.res_scale))
                .collect(),
            body_tail: Conv::same("merge.body_tail", f, f, 3),
            edge_embed: cfg.edge_skip.then(|| Conv::same("merge.edge_skip", 1, f, 3)),
            tail: Conv::same("merge.tail", f, 3, 3),
        })
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count()
            + self.body.iter().map(ResBlock::param_count).sum::<usize>()
            + self.body_tail.param_count()
            + self.edge_embed.as_ref().map_or(0, Conv::param_count)
            + self.tail.param_count()
    }

    pub fn init(&self, seed: u64) -> ParamSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        self.head.init(&mut p, &mut rng);
        for b in &self.body {
            b.init(&mut p, &mut rng);
        }
        self.body_tail.init(&mut p, &mut rng);
        if let Some(e) = &self.edge_embed {
            e.init(&mut p, &mut rng);
        }
        self.tail.init_zero(&mut p);
        p
    }

    /// Edge map lifted to `n_feats` channels.
    pub fn edge_skip_embed<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, edge: Var) -> Result<Var> {
        let conv = self
            .edge_embed
            .as_ref()
            .ok_or_else(|| Error::Config("merge net was built without the edge skip".into()))?;
        let s = tape.shape(edge);
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Dimension(format!("edge embedding expects [N,1,H,W], got {s:?}")));
        }
        conv.forward(tape, p, edge)
    }

    /// Unclamped `[N,3,H,W]` output from `sr` `[N,3,H,W]` and `edge` `[N,1,H,W]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, sr: Var, edge: Var) -> Result<Var> {
        let (ss, es) = (tape.shape(sr).to_vec(), tape.shape(edge).to_vec());
        if ss.len() != 4 || es.len() != 4 || ss[1] != 3 || es[1] != 1 || ss[0] != es[0] || ss[2..] != es[2..] {
            return Err(Error::Dimension(format!(
                "merge net expects sr [N,3,H,W] and edge [N,1,H,W] of equal extent, got {ss:?} and {es:?}"
            )));
        }
        let x = tape.concat(&[sr, edge])?;
        let head = self.head.forward(tape, p, x)?;
        let mut h = head;
        for b in &self.body {
            h = b.forward(tape, p, h)?;
        }
        let h = self.body_tail.forward(tape, p, h)?;
        let mut h = tape.add(h, head)?;
        if self.edge_embed.is_some() {
            let e = self.edge_skip_embed(tape, p, edge)?;
            h = tape.add(h, e)?;
        }
        self.tail.forward(tape, p, h)
    }

    /// Final image, clamped to [0,1].
    pub fn infer(&self, params: &ParamSet<f32>, sr: &ImageBuffer, edge: &EdgeMap) -> Result<ImageBuffer> {
        if sr.channels() != 3 {
            return Err(Error::Channel(format!("merge net needs an RGB image, got {} channel(s)", sr.channels())));
        }
        if sr.hw() != edge.hw() {
            return Err(Error::Dimension(format!(
                "sr image {:?} and edge map {:?} differ in extent",
                sr.hw(),
                edge.hw()
            )));
        }
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let s = tape.constant(sr.to_tensor());
        let e = tape.constant(edge.to_tensor());
        let y = self.forward(&mut tape, &p, s, e)?;
        let out = ImageBuffer::from_tensor(tape.value(y), 0)?;
        if !out.is_finite() {
            return Err(Error::Numerical("merge output contains non-finite values".into()));
        }
        Ok(out.clamped())
    }
}

pub fn merge_forward(sr: &ImageBuffer, edge: &EdgeMap, cfg: &MergeConfig, params: &ParamSet<f32>) -> Result<ImageBuffer> {
    MergeNet::new(cfg)?.infer(params, sr, edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, AdamState, GradCheckOptions, Tensor};
    use crate::imageproc::Plane;

    fn tiny(edge_skip: bool) -> MergeConfig {
        MergeConfig {
            n_resblocks: 1,
            n_feats: 4,
            res_scale: 1.0,
            edge_skip,
        }
    }

    #[test]
    fn extent_preserved() {
        let net = MergeNet::new(&MergeConfig::default()).unwrap();
        let p = net.init(0);
        for (h, w) in [(7, 9), (16, 16)] {
            let sr = ImageBuffer::filled(3, h, w, 0.5).unwrap();
            let out = net.infer(&p, &sr, &EdgeMap::filled(h, w, 0.2)).unwrap();
            assert_eq!(out.hw(), (h, w));
            assert_eq!(out.channels(), 3);
        }
        let sr = ImageBuffer::filled(3, 8, 8, 0.5).unwrap();
        assert!(matches!(net.infer(&p, &sr, &EdgeMap::filled(8, 9, 0.0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn closed_form_param_count() {
        for (nb, f, skip) in [(4, 16, true), (4, 16, false), (16, 128, true)] {
            let conv = |i: usize, o: usize| i * o * 9 + o;
            let expected = conv(4, f) + nb * 2 * conv(f, f) + conv(f, f) + if skip { conv(1, f) } else { 0 } + conv(f, 3);
            let net = MergeNet::new(&MergeConfig {
                n_resblocks: nb,
                n_feats: f,
                res_scale: 0.1,
                edge_skip: skip,
            })
            .unwrap();
            assert_eq!(net.param_count(), expected);
        }
    }

    #[test]
    fn zero_edge_embeds_to_bias() {
        let net = MergeNet::new(&tiny(true)).unwrap();
        let params = net.init(1);
        let mut tape = Tape::<f32>::new();
        let b = params.bind_frozen(&mut tape);
        let e = tape.constant(Tensor::zeros(&[1, 1, 6, 5]));
        let y = net.edge_skip_embed(&mut tape, &b, e).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 6, 5]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_edge_degenerates_to_plain_trunk() {
        let with = MergeNet::new(&tiny(true)).unwrap();
        let without = MergeNet::new(&tiny(false)).unwrap();
        let params = with.init(2);
        let sr = ImageBuffer::from_fn(3, 6, 6, |c, y, x| ((c + y * 2 + x) % 5) as f32 / 5.0).unwrap();
        let edge = EdgeMap::new(Plane::filled(6, 6, 0.0));
        let a = with.infer(&params, &sr, &edge).unwrap();
        let b = without.infer(&params, &sr, &edge).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradcheck_both_variants() {
        for skip in [true, false] {
            let net = MergeNet::new(&tiny(skip)).unwrap();
            let params = crate::gradsuite::fill_zeros(net.init(3), 3).cast::<f64>();
            let sr = Tensor::from_fn(&[1, 3, 5, 5], |i| ((i * 7) % 11) as f64 / 11.0);
            let edge = Tensor::from_fn(&[1, 1, 5, 5], |i| ((i * 3) % 4) as f64 / 4.0);
            let hr = Tensor::from_fn(&[1, 3, 5, 5], |i| ((i * 5) % 13) as f64 / 13.0 + 0.013);
            let report = grad_check_params(
                |tape, b| {
                    let s = tape.constant(sr.clone());
                    let e = tape.constant(edge.clone());
                    let y = net.forward(tape, b, s, e)?;
                    let t = tape.constant(hr.clone());
                    tape.loss_l1(y, t)
                },
                &params,
                GradCheckOptions {
                    max_coords_per_tensor: 8,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "skip={skip}: {report:?}");
        }
    }

    #[test]
    fn tiny_overfit_halves_l1() {
        let net = MergeNet::new(&tiny(true)).unwrap();
        let mut params = net.init(7);
        let mut adam = AdamState::new(&params);
        let sr = ImageBuffer::from_fn(3, 12, 12, |c, y, x| ((x + y + c) % 6) as f32 / 6.0).unwrap();
        let hr = sr.map(|v| (v * 0.8 + 0.1).min(1.0));
        let edge = EdgeMap::new(Plane::from_fn(12, 12, |_, x| if x == 6 { 1.0 } else { 0.0 }));
        let mut losses = vec![];
        for _ in 0..200 {
            let mut tape = Tape::<f32>::new();
            let b = params.bind(&mut tape);
            let s = tape.constant(sr.to_tensor());
            let e = tape.constant(edge.to_tensor());
            let t = tape.constant(hr.to_tensor());
            let y = net.forward(&mut tape, &b, s, e).unwrap();
            let loss = tape.loss_l1(y, t).unwrap();
            losses.push(tape.value(loss).item().unwrap());
            let g = tape.backward(loss).unwrap();
            let grads = b.collect_grads(&tape, &g);
            adam.step(&mut params, &grads, 1e-3).unwrap();
        }
        assert!(losses[199] < 0.5 * losses[0], "{} -> {}", losses[0], losses[199]);
    }
}
