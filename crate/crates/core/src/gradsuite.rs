//! Finite-difference gradient suite in double precision, grouped by module.

use std::fmt::Display;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::layers::{Conv, ResBlock};
use crate::autodiff::{grad_check, grad_check_params, Bound, GradCheckOptions, ParamSet, Tape, Tensor, Var};
use crate::config::{EdgeNetConfig, MergeConfig, SrConfig};
use crate::edge_net::{Branch, DenseResBlock, EdgeNet};
use crate::error::{Error, Result};
use crate::merge_net::MergeNet;
use crate::sr_net::{PyramidPool, SrNet, UpsampleHead};

/// Tolerance for operations linear in the checked variable.
pub const LINEAR_TOL: f64 = 1e-6;
/// Tolerance for everything else.
pub const NONLINEAR_TOL: f64 = 1e-4;

/// Central differences are exact on maps linear in the perturbed
/// coordinate, so those checks use a wide step that keeps roundoff small.
fn step_for(tol: f64) -> f64 {
    if tol <= LINEAR_TOL {
        1e-3
    } else {
        1e-6
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Core,
    Sr,
    Edge,
    Merge,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Core, Suite::Sr, Suite::Edge, Suite::Merge];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "core" => Ok(Suite::Core),
            "sr" => Ok(Suite::Sr),
            "edge" => Ok(Suite::Edge),
            "merge" => Ok(Suite::Merge),
            _ => Err(Error::Usage(format!("unknown gradcheck module '{s}' (all|core|sr|edge|merge)"))),
        }
    }
}

impl Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Suite::Core => "core",
            Suite::Sr => "sr",
            Suite::Edge => "edge",
            Suite::Merge => "merge",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
    /// Coordinates judged by a one-sided difference because the step
    /// crossed a kink.
    pub kinks: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from `kinks` by at least `gap`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// `sum(y * r)` for a fixed random `r` shaped like `y`.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, tape.shape(y), -1.0, 1.0);
    let r = tape.constant(r);
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

struct Collector {
    suite: Suite,
    out: Vec<CheckResult>,
}

impl Collector {
    fn input<F>(&mut self, name: &str, tol: f64, input: &Tensor<f64>, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
    {
        let e = grad_check(f, input, step_for(tol))?;
        self.push(name, tol, e, 0);
        Ok(())
    }

    fn params<F>(&mut self, name: &str, tol: f64, params: &ParamSet<f32>, coords: usize, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
    {
        let report = grad_check_params(
            f,
            &params.cast::<f64>(),
            GradCheckOptions {
                h: step_for(tol),
                max_coords_per_tensor: coords,
            },
        )?;
        self.push(name, tol, report.max_rel_error, report.kinks);
        Ok(())
    }

    fn push(&mut self, name: &str, tol: f64, rel_error: f64, kinks: usize) {
        log::debug!("gradcheck {}/{name}: {rel_error:.3e} (tol {tol:.0e})", self.suite);
        self.out.push(CheckResult {
            suite: self.suite,
            name: name.to_string(),
            rel_error,
            tolerance: tol,
            kinks,
        });
    }
}

fn core(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = rand_tensor(&mut rng, &[2, 3, 5, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
    {
        let (w, b) = (w.clone(), b.clone());
        c.input("conv2d/input", LINEAR_TOL, &x, move |t, v| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let y = t.conv2d(v, wv, Some(bv), 1, 1)?;
            project(t, y, 1)
        })?;
    }
    {
        let (w, b) = (w.clone(), b.clone());
        c.input("conv2d/input stride 2", LINEAR_TOL, &x, move |t, v| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let y = t.conv2d(v, wv, Some(bv), 2, 1)?;
            project(t, y, 2)
        })?;
    }
    {
        let (x, b) = (x.clone(), b.clone());
        c.input("conv2d/weight", LINEAR_TOL, &w, move |t, wv| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b.clone());
            let y = t.conv2d(xv, wv, Some(bv), 1, 1)?;
            project(t, y, 3)
        })?;
    }
    {
        let (x, w) = (x.clone(), w.clone());
        c.input("conv2d/bias", LINEAR_TOL, &b, move |t, bv| {
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let y = t.conv2d(xv, wv, Some(bv), 1, 0)?;
            project(t, y, 4)
        })?;
    }
    let xk = away_from(&mut rng, &[1, 2, 4, 4], -1.0, 2.0, &[0.0, 1.0], 1e-3);
    c.input("relu", NONLINEAR_TOL, &xk, |t, v| {
        let y = t.relu(v);
        project(t, y, 5)
    })?;
    c.input("sigmoid", NONLINEAR_TOL, &x, |t, v| {
        let y = t.sigmoid(v);
        project(t, y, 6)
    })?;
    c.input("clamp01", NONLINEAR_TOL, &xk, |t, v| {
        let y = t.clamp01(v);
        project(t, y, 7)
    })?;
    let other = rand_tensor(&mut rng, &[2, 3, 5, 6], -1.0, 1.0);
    {
        let o = other.clone();
        c.input("add", LINEAR_TOL, &x, move |t, v| {
            let ov = t.constant(o.clone());
            let y = t.add(v, ov)?;
            project(t, y, 8)
        })?;
    }
    c.input("mul", NONLINEAR_TOL, &x, |t, v| {
        let y = t.mul(v, v)?;
        project(t, y, 9)
    })?;
    c.input("scale", LINEAR_TOL, &x, |t, v| {
        let y = t.scale(v, -0.37);
        project(t, y, 10)
    })?;
    {
        let o = other.clone();
        c.input("concat", LINEAR_TOL, &x, move |t, v| {
            let ov = t.constant(o.clone());
            let y = t.concat(&[ov, v, ov])?;
            project(t, y, 11)
        })?;
    }
    let big = rand_tensor(&mut rng, &[1, 2, 7, 9], -1.0, 1.0);
    c.input("adaptive_avg_pool2d", LINEAR_TOL, &big, |t, v| {
        let y = t.adaptive_avg_pool2d(v, (3, 4))?;
        project(t, y, 12)
    })?;
    let sh = rand_tensor(&mut rng, &[1, 8, 3, 4], -1.0, 1.0);
    c.input("pixel_shuffle", LINEAR_TOL, &sh, |t, v| {
        let y = t.pixel_shuffle(v, 2)?;
        project(t, y, 13)
    })?;
    c.input("bilinear_upsample", LINEAR_TOL, &sh, |t, v| {
        let y = t.bilinear_upsample(v, (7, 10))?;
        project(t, y, 14)
    })?;
    c.input("crop", LINEAR_TOL, &big, |t, v| {
        let y = t.crop(v, 1, 2, (4, 5))?;
        project(t, y, 15)
    })?;
    c.input("sum", LINEAR_TOL, &x, |t, v| {
        let y = t.scale(v, 0.5);
        Ok(t.sum(y))
    })?;
    c.input("mean", LINEAR_TOL, &x, |t, v| Ok(t.mean(v)))?;
    let target = rand_tensor(&mut rng, &[2, 3, 5, 6], -1.0, 1.0);
    let pred = Tensor::from_fn(&[2, 3, 5, 6], |i| {
        let d = rng.random_range(0.01..0.5);
        target.data()[i] + if i % 2 == 0 { d } else { -d }
    });
    {
        let tg = target.clone();
        c.input("loss_l1", NONLINEAR_TOL, &pred, move |t, v| {
            let tv = t.constant(tg.clone());
            t.loss_l1(v, tv)
        })?;
    }
    let probs = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
    let logits = rand_tensor(&mut rng, &[2, 1, 4, 4], -3.0, 3.0);
    c.input("loss_bce_logits", NONLINEAR_TOL, &logits, move |t, v| {
        let tv = t.constant(probs.clone());
        t.loss_bce_logits(v, tv)
    })?;
    Ok(())
}

fn init_layers(seed: u64, f: impl FnOnce(&mut ParamSet<f32>, &mut ChaCha8Rng)) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    f(&mut p, &mut rng);
    fill_zeros(p, seed)
}

/// Zero-initialised tensors (biases, residual and output convs) would make
/// many checks compare 0 with 0; give them small random values instead.
pub fn fill_zeros(mut p: ParamSet<f32>, seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in p.iter_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    p
}

fn sr(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let blocks = [ResBlock::new("a", 4, 1.0), ResBlock::new("b", 4, 0.5)];
    let params = init_layers(1, |p, r| blocks.iter().for_each(|b| b.init(p, r)));
    let x = rand_tensor(&mut rng, &[1, 4, 6, 6], -1.0, 1.0);
    c.params("res_block x2", NONLINEAR_TOL, &params, 12, |t, b| {
        let mut h = t.constant(x.clone());
        for blk in &blocks {
            h = blk.forward(t, b, h)?;
        }
        project(t, h, 21)
    })?;
    c.input("res_block x2/input", NONLINEAR_TOL, &x, |t, v| {
        let b = params.cast::<f64>().bind_frozen(t);
        let mut h = v;
        for blk in &blocks {
            h = blk.forward(t, &b, h)?;
        }
        project(t, h, 22)
    })?;

    let pool = PyramidPool::new("pp", 8, &[1, 2, 3, 6], false)?;
    let params = init_layers(2, |p, r| pool.init(p, r));
    let x = rand_tensor(&mut rng, &[1, 8, 7, 8], -1.0, 1.0);
    c.params("pyramid_pool_block", LINEAR_TOL, &params, 8, |t, b| {
        let xv = t.constant(x.clone());
        let y = pool.forward(t, b, xv)?;
        project(t, y, 23)
    })?;

    let head = UpsampleHead::new("up", 4, 4, &[1, 2, 3, 6])?;
    let params = init_layers(3, |p, r| head.init(p, r));
    let x = rand_tensor(&mut rng, &[1, 4, 6, 6], -1.0, 1.0);
    c.params("upsample_head x4", NONLINEAR_TOL, &params, 8, |t, b| {
        let xv = t.constant(x.clone());
        let y = head.forward(t, b, xv)?;
        let y = t.mul(y, y)?;
        project(t, y, 24)
    })?;

    let net = SrNet::new(&SrConfig {
        n_resblocks: 1,
        n_feats: 4,
        scale: 2,
        res_scale: 1.0,
        pyramid_bins: vec![1, 2, 3, 6],
    })?;
    let params = fill_zeros(net.init(4), 4);
    let lr = rand_tensor(&mut rng, &[1, 3, 6, 6], 0.0, 1.0);
    let hr = rand_tensor(&mut rng, &[1, 3, 12, 12], 0.0, 1.0);
    c.params("edsr_star full l1", NONLINEAR_TOL, &params, 6, |t, b| {
        let x = t.constant(lr.clone());
        let y = net.forward(t, b, x)?;
        let target = t.constant(hr.clone());
        t.loss_l1(y, target)
    })?;
    Ok(())
}

fn edge(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let chain = [
        DenseResBlock::new("d0", 4, &[], 4),
        DenseResBlock::new("d1", 4, &[4], 4),
        DenseResBlock::new("d2", 4, &[4, 4], 4),
    ];
    let params = init_layers(1, |p, r| chain.iter().for_each(|b| b.init(p, r)));
    let x = rand_tensor(&mut rng, &[1, 4, 5, 5], -1.0, 1.0);
    c.params("dense_res_block chain x3", NONLINEAR_TOL, &params, 8, |t, b| {
        let x0 = t.constant(x.clone());
        let h0 = chain[0].forward(t, b, x0, &[])?;
        let h1 = chain[1].forward(t, b, h0, &[x0])?;
        let h2 = chain[2].forward(t, b, h1, &[x0, h0])?;
        project(t, h2, 31)
    })?;

    let cfg = EdgeNetConfig {
        nr: 2,
        ..EdgeNetConfig::default()
    };
    let net = EdgeNet::new(&cfg)?;
    let params = fill_zeros(net.init(2), 2);
    let img = rand_tensor(&mut rng, &[1, 3, 16, 16], 0.0, 1.0);

    let sides: Vec<Tensor<f64>> = (0..5).map(|_| rand_tensor(&mut rng, &[1, 1, 16, 16], -2.0, 2.0)).collect();
    c.params("short_connection_fuse + fuse_final", LINEAR_TOL, &params, 4, |t, b| {
        let parts: Vec<Var> = sides.iter().map(|s| t.constant(s.clone())).collect();
        let refined = net.short_connection_fuse(t, b, &parts)?;
        let fused = net.fuse_final(t, b, &refined)?;
        let all = t.concat(&[refined[0], refined[2], fused])?;
        project(t, all, 32)
    })?;

    c.params("side_output stage 3", NONLINEAR_TOL, &params, 4, |t, b| {
        let x = t.constant(img.clone());
        let feats = net.backbone(t, b, x)?;
        let mut sides = Vec::new();
        for (head, &f) in net.sides.iter().zip(&feats).take(4) {
            sides.push(head.forward(t, b, f, &sides, (16, 16))?);
        }
        project(t, sides[3], 33)
    })?;

    let target_bin = Tensor::from_fn(&[1, 1, 16, 16], |i| if (i % 16) == 7 { 1.0 } else { 0.0 });
    let target_soft = Tensor::from_fn(&[1, 1, 16, 16], |i| 1.0 / (1.0 + ((i % 16) as f64 - 7.0).abs()) - 0.013);
    for (branch, target) in [(Branch::Classifier, &target_bin), (Branch::Regressor, &target_soft)] {
        c.params(&format!("dense_edge full {branch}"), NONLINEAR_TOL, &params, 2, |t, b| {
            let x = t.constant(img.clone());
            let out = net.forward(t, b, x)?;
            let tg = t.constant(target.clone());
            net.loss(t, &out, branch, tg)
        })?;
    }
    Ok(())
}

fn merge(c: &mut Collector) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let sr = rand_tensor(&mut rng, &[1, 3, 6, 6], 0.0, 1.0);
    let edge = rand_tensor(&mut rng, &[1, 1, 6, 6], 0.0, 1.0);
    let hr = rand_tensor(&mut rng, &[1, 3, 6, 6], 0.0, 1.0);
    let embed = Conv::same("merge.edge_skip", 1, 4, 3);
    let net_on = MergeNet::new(&MergeConfig {
        n_resblocks: 1,
        n_feats: 4,
        res_scale: 1.0,
        edge_skip: true,
    })?;
    let params = fill_zeros(net_on.init(1), 1);
    c.input("edge_skip_embed/edge", LINEAR_TOL, &edge, |t, v| {
        let b = params.cast::<f64>().bind_frozen(t);
        let y = net_on.edge_skip_embed(t, &b, v)?;
        project(t, y, 41)
    })?;
    let only_embed = init_layers(2, |p, r| embed.init(p, r));
    c.params("edge_skip_embed/weights", LINEAR_TOL, &only_embed, usize::MAX, |t, b| {
        let e = t.constant(edge.clone());
        let y = net_on.edge_skip_embed(t, b, e)?;
        project(t, y, 42)
    })?;
    for skip in [true, false] {
        let net = MergeNet::new(&MergeConfig {
            n_resblocks: 1,
            n_feats: 4,
            res_scale: 1.0,
            edge_skip: skip,
        })?;
        let params = fill_zeros(net.init(3), 3);
        let name = if skip { "merge full with edge skip" } else { "merge full without edge skip" };
        c.params(name, NONLINEAR_TOL, &params, 8, |t, b| {
            let s = t.constant(sr.clone());
            let e = t.constant(edge.clone());
            let y = net.forward(t, b, s, e)?;
            let tg = t.constant(hr.clone());
            t.loss_l1(y, tg)
        })?;
    }
    Ok(())
}

/// Run one module's checks.
pub fn run_suite(suite: Suite) -> Result<Vec<CheckResult>> {
    let mut c = Collector { suite, out: Vec::new() };
    match suite {
        Suite::Core => core(&mut c)?,
        Suite::Sr => sr(&mut c)?,
        Suite::Edge => edge(&mut c)?,
        Suite::Merge => merge(&mut c)?,
    }
    Ok(c.out)
}
