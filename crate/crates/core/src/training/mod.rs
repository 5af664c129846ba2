//! Per-module optimisation, checkpointing and benchmark evaluation.

mod checkpoint;
mod data;
mod eval;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use data::{sample_aligned, sample_patch_pair, sample_rng, Augment, Example, SampleRecord, TrainData};
pub use eval::{evaluate_benchmark, format_psnr, BenchmarkReport, BenchmarkRow};

use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::config::{EdgeNetConfig, FlatConfig, LossKind, MergeConfig, Module, SrConfig, TrainConfig};
use crate::edge_net::{Branch, EdgeNet};
use crate::error::{Error, Result};
use crate::merge_net::MergeNet;
use crate::sr_net::SrNet;

/// Learning rate for an epoch: halved every `halving_period_epochs` for sr
/// and merge, constant for edge.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: u64) -> f64 {
    match cfg.module {
        Module::Edge => cfg.base_lr,
        _ => cfg.base_lr * 0.5f64.powi((epoch / cfg.halving_period_epochs as u64) as i32),
    }
}

/// Architecture being trained.
#[derive(Clone, Debug)]
pub enum Model {
    Sr(SrNet),
    Edge(EdgeNet, Branch),
    Merge(MergeNet),
}

impl Model {
    pub fn sr(cfg: &SrConfig) -> Result<Self> {
        Ok(Model::Sr(SrNet::new(cfg)?))
    }

    pub fn edge(cfg: &EdgeNetConfig, branch: Branch) -> Result<Self> {
        Ok(Model::Edge(EdgeNet::new(cfg)?, branch))
    }

    pub fn merge(cfg: &MergeConfig) -> Result<Self> {
        Ok(Model::Merge(MergeNet::new(cfg)?))
    }

    pub fn module(&self) -> Module {
        match self {
            Model::Sr(_) => Module::Sr,
            Model::Edge(..) => Module::Edge,
            Model::Merge(_) => Module::Merge,
        }
    }

    pub fn init(&self, seed: u64) -> ParamSet<f32> {
        match self {
            Model::Sr(n) => n.init(seed),
            Model::Edge(n, _) => n.init(seed),
            Model::Merge(n) => n.init(seed),
        }
    }

    /// Architecture section of the config echo, plus `model.*` tags.
    pub fn write_flat(&self, f: &mut FlatConfig) {
        f.set("model.kind", self.module());
        match self {
            Model::Sr(n) => n.cfg.write_flat(f),
            Model::Edge(n, b) => {
                n.cfg.write_flat(f);
                f.set("model.branch", b);
            }
            Model::Merge(n) => n.cfg.write_flat(f),
        }
    }

    /// Patch side of the first image of each example.
    fn patch(&self, tc: &TrainConfig) -> usize {
        match self {
            Model::Sr(_) => tc.lr_patch,
            _ => tc.hr_patch(),
        }
    }

    /// Loss on a batch of aligned patches (image-major: `batch[k]` holds
    /// every sample's k-th image).
    fn loss(&self, tc: &TrainConfig, tape: &mut Tape<f32>, params: &crate::autodiff::Bound, batch: Vec<Tensor<f32>>) -> Result<crate::autodiff::Var> {
        let mut it = batch.into_iter();
        let mut next = || it.next().ok_or_else(|| Error::Data("batch is missing an image".into()));
        match self {
            Model::Sr(n) => {
                let x = tape.constant(next()?);
                let t = tape.constant(next()?);
                let y = n.forward(tape, params, x)?;
                tape.loss_l1(y, t)
            }
            Model::Edge(n, branch) => {
                let x = tape.constant(next()?);
                let bin = next()?;
                let soft = next()?;
                let target = tape.constant(match branch {
                    Branch::Classifier => bin,
                    Branch::Regressor => soft,
                });
                let out = n.forward(tape, params, x)?;
                n.loss(tape, &out, *branch, target)
            }
            Model::Merge(n) => {
                let s = tape.constant(next()?);
                let e = tape.constant(next()?);
                let t = tape.constant(next()?);
                let y = n.forward(tape, params, s, e)?;
                match tc.loss {
                    LossKind::L1 => tape.loss_l1(y, t),
                    LossKind::Bce => Err(Error::Config("merge training supports only the l1 loss".into())),
                }
            }
        }
    }
}

fn check_compat(tc: &TrainConfig, model: &Model, data: &TrainData) -> Result<()> {
    if tc.module != model.module() || data.module != model.module() {
        return Err(Error::Config(format!(
            "module mismatch: train config '{}', model '{}', data '{}'",
            tc.module,
            model.module(),
            data.module
        )));
    }
    if tc.module == Module::Sr && tc.loss != LossKind::L1 {
        return Err(Error::Config("sr training supports only the l1 loss".into()));
    }
    if let Model::Sr(n) = model {
        if n.cfg.scale != tc.scale {
            return Err(Error::Config(format!(
                "sr.scale={} disagrees with train.scale={}",
                n.cfg.scale, tc.scale
            )));
        }
    }
    if let Model::Edge(n, _) = model {
        let m = n.cfg.extent_multiple();
        if tc.hr_patch() % m != 0 {
            return Err(Error::Config(format!(
                "edge patch side lr_patch*scale={} must be a multiple of {m}",
                tc.hr_patch()
            )));
        }
    }
    let need = model.patch(tc);
    if data.min_extent() < need {
        return Err(Error::Size(format!(
            "training images must be at least {need} pixels on each side (smallest is {})",
            data.min_extent()
        )));
    }
    Ok(())
}

/// Starting point of a run: fresh parameters or a loaded checkpoint.
pub fn initial_checkpoint(tc: &TrainConfig, model: &Model) -> Checkpoint {
    let mut config = FlatConfig::new();
    model.write_flat(&mut config);
    tc.write_flat(&mut config);
    Checkpoint::new(model.init(tc.seed), config)
}

/// Architecture keys of a config echo.
fn arch_keys(f: &FlatConfig) -> Vec<(String, String)> {
    f.keys()
        .filter(|k| !k.starts_with("train."))
        .map(|k| (k.to_string(), f.get(k).unwrap_or("").to_string()))
        .collect()
}

/// Run optimizer steps from `ckpt.step` up to `until` (exclusive),
/// calling `on_step(step, loss)` after each. The sample for slot `j` of
/// step `t` depends only on `(seed, t, j)`, so a resumed run retraces an
/// uninterrupted one exactly.
pub fn train_steps(
    tc: &TrainConfig,
    model: &Model,
    data: &TrainData,
    ckpt: &mut Checkpoint,
    until: u64,
    mut on_step: impl FnMut(u64, f64) -> Result<()>,
) -> Result<()> {
    tc.validate()?;
    check_compat(tc, model, data)?;
    let mut expected = FlatConfig::new();
    model.write_flat(&mut expected);
    if arch_keys(&expected) != arch_keys(&ckpt.config) {
        return Err(Error::Config("checkpoint architecture does not match the requested model".into()));
    }
    let patch = model.patch(tc);
    let spe = tc.steps_per_epoch as u64;
    while ckpt.step < until {
        let step = ckpt.step;
        let mut per_image: Vec<Vec<Tensor<f32>>> = Vec::new();
        for slot in 0..tc.batch_size as u64 {
            let (imgs, _) = data.sample(patch, tc.augment, tc.seed, step, slot)?;
            per_image.resize_with(imgs.len(), Vec::new);
            for (k, img) in imgs.iter().enumerate() {
                per_image[k].push(img.to_tensor());
            }
        }
        let batch = per_image
            .iter()
            .map(|v| Tensor::stack_batch(v))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let bound = ckpt.params.bind(&mut tape);
        let loss = model.loss(tc, &mut tape, &bound, batch)?;
        let value = tape.value(loss).item()? as f64;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss became {value} at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let grads = bound.collect_grads(&tape, &grads);
        let lr = lr_at_epoch(tc, step / spe);
        ckpt.adam.step(&mut ckpt.params, &grads, lr)?;
        if !ckpt.params.is_finite() {
            return Err(Error::Numerical(format!("parameters became non-finite at step {step}")));
        }
        ckpt.step += 1;
        ckpt.epoch = ckpt.step / spe;
        on_step(step, value)?;
    }
    let mut config = FlatConfig::new();
    model.write_flat(&mut config);
    tc.write_flat(&mut config);
    ckpt.config = config;
    Ok(())
}

/// Convenience wrapper: fresh run of `steps` steps returning the losses.
pub fn train_module(tc: &TrainConfig, model: &Model, data: &TrainData, steps: u64) -> Result<(Checkpoint, Vec<f64>)> {
    let mut ckpt = initial_checkpoint(tc, model);
    let mut losses = Vec::with_capacity(steps as usize);
    train_steps(tc, model, data, &mut ckpt, steps, |_, l| {
        losses.push(l);
        Ok(())
    })?;
    Ok((ckpt, losses))
}

/// Files written by [`train_to_dir`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub periodic: Vec<PathBuf>,
}

/// Full run with a loss CSV, periodic checkpoints `{tag}_epoch{e}.srew`
/// and a final `{tag}.srew` in `out_dir`. A resumed run continues the CSV.
pub fn train_to_dir(
    tc: &TrainConfig,
    model: &Model,
    data: &TrainData,
    out_dir: &Path,
    tag: &str,
    resume: Option<&Path>,
) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ckpt = match resume {
        Some(p) => load_checkpoint(p)?,
        None => initial_checkpoint(tc, model),
    };
    let csv_path = out_dir.join(format!("{tag}_loss.csv"));
    let mut csv = if resume.is_some() && csv_path.exists() {
        std::fs::OpenOptions::new().append(true).open(&csv_path)
    } else {
        std::fs::File::create(&csv_path).and_then(|mut f| f.write_all(b"step,loss\n").map(|_| f))
    }
    .map_err(|e| Error::io(&csv_path, e))?;
    let spe = tc.steps_per_epoch as u64;
    let every = tc.checkpoint_every as u64;
    let mut periodic = Vec::new();
    let total = tc.total_steps();
    log::info!("training {tag}: steps {}..{total}", ckpt.step);
    // checkpoint writes need the state after each step, so step one at a time
    while ckpt.step < total {
        let mut line = String::new();
        let next = ckpt.step + 1;
        train_steps(tc, model, data, &mut ckpt, next, |s, l| {
            line = format!("{s},{l}\n");
            Ok(())
        })?;
        csv.write_all(line.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
        if every > 0 && ckpt.step % spe == 0 && ckpt.epoch % every == 0 {
            let p = out_dir.join(format!("{tag}_epoch{}.srew", ckpt.epoch));
            ckpt.save(&p)?;
            log::info!("{tag}: epoch {} checkpoint {}", ckpt.epoch, p.display());
            periodic.push(p);
        }
    }
    let final_checkpoint = out_dir.join(format!("{tag}.srew"));
    ckpt.save(&final_checkpoint)?;
    Ok(RunOutput {
        final_checkpoint,
        loss_csv: csv_path,
        periodic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageproc::ImageBuffer;

    #[test]
    fn schedule_examples() {
        let sr = TrainConfig::for_module(Module::Sr);
        assert_eq!(lr_at_epoch(&sr, 0), 1e-4);
        assert_eq!(lr_at_epoch(&sr, 150), 5e-5);
        assert_eq!(lr_at_epoch(&sr, 200), 2.5e-5);
        let edge = TrainConfig::for_module(Module::Edge);
        assert_eq!(lr_at_epoch(&edge, 199), 1e-6);
        let merge = TrainConfig::for_module(Module::Merge);
        let mut prev = f64::INFINITY;
        for e in 0..500 {
            let lr = lr_at_epoch(&merge, e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn sr_data() -> TrainData {
        let hr = ImageBuffer::from_fn(3, 32, 32, |c, y, x| ((x * 3 + y * 5 + c) % 16) as f32 / 16.0).unwrap();
        let (lr, hr) = crate::imageproc::degrade_pair(&hr, 2).unwrap();
        TrainData {
            module: Module::Sr,
            examples: vec![Example {
                id: "a".into(),
                images: vec![(lr, 1), (hr, 2)],
            }],
        }
    }

    fn tiny_sr() -> (TrainConfig, Model) {
        let tc = TrainConfig {
            batch_size: 2,
            lr_patch: 8,
            steps_per_epoch: 3,
            epochs: 2,
            base_lr: 1e-3,
            checkpoint_every: 1,
            ..TrainConfig::for_module(Module::Sr)
        };
        let model = Model::sr(&SrConfig {
            n_resblocks: 1,
            n_feats: 8,
            ..SrConfig::default()
        })
        .unwrap();
        (tc, model)
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (tc, model) = tiny_sr();
        let data = sr_data();
        let (full, full_losses) = train_module(&tc, &model, &data, 6).unwrap();
        let (half, mut losses) = train_module(&tc, &model, &data, 3).unwrap();
        let mut half = Checkpoint::from_bytes(&half.to_bytes().unwrap()).unwrap();
        train_steps(&tc, &model, &data, &mut half, 6, |_, l| {
            losses.push(l);
            Ok(())
        })
        .unwrap();
        assert_eq!(losses, full_losses);
        assert_eq!(half.to_bytes().unwrap(), full.to_bytes().unwrap());
    }

    #[test]
    fn run_dir_outputs() {
        let (tc, model) = tiny_sr();
        let dir = tempfile::tempdir().unwrap();
        let out = train_to_dir(&tc, &model, &sr_data(), dir.path(), "sr", None).unwrap();
        assert_eq!(out.periodic.len(), 2);
        let csv = std::fs::read_to_string(&out.loss_csv).unwrap();
        assert_eq!(csv.lines().count(), 7);
        let ck = load_checkpoint(&out.final_checkpoint).unwrap();
        assert_eq!((ck.step, ck.epoch), (6, 2));
        assert_eq!(ck.config.get("train.module"), Some("sr"));
    }

    #[test]
    fn mismatched_module_is_config_error() {
        let (tc, _) = tiny_sr();
        let model = Model::merge(&MergeConfig::default()).unwrap();
        assert!(matches!(train_module(&tc, &model, &sr_data(), 1), Err(Error::Config(_))));
    }
}
