//! Architecture and training hyperparameters, plus the flat `key=value`
//! text format they are read from and echoed into checkpoints.
//!
//! Keys are the struct field names prefixed by their section, e.g.
//! `sr.n_feats=16` or `train.base_lr=0.0001`. Lists are comma separated.
//! `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `key=value` map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{}'", lineno + 1, raw))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{}'", lineno + 1, k)));
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &FlatConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Keys under `section.` that `known` does not list.
    fn check_section(&self, section: &str, known: &[&str]) -> Result<()> {
        let prefix = format!("{section}.");
        for k in self.entries.keys() {
            if let Some(field) = k.strip_prefix(&prefix) {
                if !known.contains(&field) {
                    return Err(Error::Config(format!("unknown key '{k}'")));
                }
            }
        }
        Ok(())
    }

    fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn check_scale(scale: usize) -> Result<()> {
    if ![2, 4, 8].contains(&scale) {
        return Err(Error::Config(format!("scale must be 2, 4 or 8, got {scale}")));
    }
    Ok(())
}

/// Super-resolution network hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SrConfig {
    pub n_resblocks: usize,
    pub n_feats: usize,
    pub scale: usize,
    pub res_scale: f64,
    pub pyramid_bins: Vec<usize>,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            n_resblocks: 4,
            n_feats: 16,
            scale: 2,
            res_scale: 1.0,
            pyramid_bins: vec![1, 2, 3, 6],
        }
    }
}

impl SrConfig {
    /// Full-width reference configuration (32 blocks, 256 channels).
    pub fn full_scale(scale: usize) -> Self {
        SrConfig {
            n_resblocks: 32,
            n_feats: 256,
            scale,
            res_scale: 0.1,
            pyramid_bins: vec![1, 2, 3, 6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.n_feats == 0 || self.pyramid_bins.is_empty() {
            return Err(Error::Config("sr.n_feats and sr.pyramid_bins must be non-empty".into()));
        }
        if self.n_feats % self.pyramid_bins.len() != 0 {
            return Err(Error::Config(format!(
                "sr.n_feats={} must be divisible by the number of pyramid bins ({})",
                self.n_feats,
                self.pyramid_bins.len()
            )));
        }
        if self.pyramid_bins.contains(&0) || self.pyramid_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sr.pyramid_bins must be positive and ascending".into()));
        }
        Ok(())
    }

    pub fn from_flat(f: &FlatConfig) -> Result<Self> {
        f.check_section("sr", &["n_resblocks", "n_feats", "scale", "res_scale", "pyramid_bins"])?;
        let d = Self::default();
        let cfg = SrConfig {
            n_resblocks: f.value("sr.n_resblocks", d.n_resblocks)?,
            n_feats: f.value("sr.n_feats", d.n_feats)?,
            scale: f.value("sr.scale", d.scale)?,
            res_scale: f.value("sr.res_scale", d.res_scale)?,
            pyramid_bins: f.list("sr.pyramid_bins", d.pyramid_bins)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_flat(&self, f: &mut FlatConfig) {
        f.set("sr.n_resblocks", self.n_resblocks);
        f.set("sr.n_feats", self.n_feats);
        f.set("sr.scale", self.scale);
        f.set("sr.res_scale", self.res_scale);
        f.set("sr.pyramid_bins", join(&self.pyramid_bins));
    }
}

/// Edge network hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeNetConfig {
    /// Stage-1 width.
    pub nr: usize,
    pub stage_mults: Vec<usize>,
    pub n_stages: usize,
    /// Stage-1 widths of the ensemble members, ascending.
    pub complexities: Vec<usize>,
    /// Blur applied to binary Canny edges to form the regressor target.
    pub gt_sigma: f64,
    pub blocks_per_stage: usize,
    /// Channel width inside the side-output upsamplers.
    pub side_width: usize,
    pub side_bins: Vec<usize>,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for EdgeNetConfig {
    fn default() -> Self {
        EdgeNetConfig {
            nr: 4,
            stage_mults: vec![1, 2, 4, 8, 8],
            n_stages: 5,
            complexities: vec![4, 8, 16],
            gt_sigma: 1.0,
            blocks_per_stage: 2,
            side_width: 4,
            side_bins: vec![1, 2, 3, 6],
            canny_sigma: 1.4,
            canny_low: 0.1,
            canny_high: 0.2,
        }
    }
}

impl EdgeNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages != 5 || self.stage_mults.len() != self.n_stages {
            return Err(Error::Config(format!(
                "edge net has 5 stages with one multiplier each, got n_stages={} and {} multipliers",
                self.n_stages,
                self.stage_mults.len()
            )));
        }
        if self.complexities.is_empty() || self.complexities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("edge.complexities must be non-empty and ascending".into()));
        }
        if self.nr == 0 || self.blocks_per_stage == 0 || self.side_width == 0 {
            return Err(Error::Config("edge widths and depths must be positive".into()));
        }
        if self.side_bins.is_empty() || self.side_width % self.side_bins.len() != 0 {
            return Err(Error::Config(format!(
                "edge.side_width={} must be divisible by the number of side bins ({})",
                self.side_width,
                self.side_bins.len()
            )));
        }
        if !(self.gt_sigma > 0.0 && self.canny_sigma > 0.0) {
            return Err(Error::Config("edge sigmas must be > 0".into()));
        }
        if !(self.canny_low > 0.0 && self.canny_low < self.canny_high) {
            return Err(Error::Config("edge canny thresholds need 0 < low < high".into()));
        }
        Ok(())
    }

    /// Same architecture at a different stage-1 width.
    pub fn with_nr(&self, nr: usize) -> Self {
        EdgeNetConfig {
            nr,
            ..self.clone()
        }
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.nr * self.stage_mults[stage]
    }

    /// Required divisor of input extents.
    pub fn extent_multiple(&self) -> usize {
        1 << (self.n_stages - 1)
    }

    pub fn from_flat(f: &FlatConfig) -> Result<Self> {
        f.check_section(
            "edge",
            &[
                "nr",
                "stage_mults",
                "n_stages",
                "complexities",
                "gt_sigma",
                "blocks_per_stage",
                "side_width",
                "side_bins",
                "canny_sigma",
                "canny_low",
                "canny_high",
            ],
        )?;
        let d = Self::default();
        let cfg = EdgeNetConfig {
            nr: f.value("edge.nr", d.nr)?,
            stage_mults: f.list("edge.stage_mults", d.stage_mults)?,
            n_stages: f.value("edge.n_stages", d.n_stages)?,
            complexities: f.list("edge.complexities", d.complexities)?,
            gt_sigma: f.value("edge.gt_sigma", d.gt_sigma)?,
            blocks_per_stage: f.value("edge.blocks_per_stage", d.blocks_per_stage)?,
            side_width: f.value("edge.side_width", d.side_width)?,
            side_bins: f.list("edge.side_bins", d.side_bins)?,
            canny_sigma: f.value("edge.canny_sigma", d.canny_sigma)?,
            canny_low: f.value("edge.canny_low", d.canny_low)?,
            canny_high: f.value("edge.canny_high", d.canny_high)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_flat(&self, f: &mut FlatConfig) {
        f.set("edge.nr", self.nr);
        f.set("edge.stage_mults", join(&self.stage_mults));
        f.set("edge.n_stages", self.n_stages);
        f.set("edge.complexities", join(&self.complexities));
        f.set("edge.gt_sigma", self.gt_sigma);
        f.set("edge.blocks_per_stage", self.blocks_per_stage);
        f.set("edge.side_width", self.side_width);
        f.set("edge.side_bins", join(&self.side_bins));
        f.set("edge.canny_sigma", self.canny_sigma);
        f.set("edge.canny_low", self.canny_low);
        f.set("edge.canny_high", self.canny_high);
    }
}

/// Merge network hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeConfig {
    pub n_resblocks: usize,
    pub n_feats: usize,
    pub res_scale: f64,
    /// Add the convolved edge map to the trunk output.
    pub edge_skip: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            n_resblocks: 4,
            n_feats: 16,
            res_scale: 1.0,
            edge_skip: true,
        }
    }
}

impl MergeConfig {
    pub fn full_scale() -> Self {
        MergeConfig {
            n_resblocks: 16,
            n_feats: 128,
            res_scale: 0.1,
            edge_skip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_resblocks < 1 || self.n_feats < 4 {
            return Err(Error::Config(format!(
                "merge needs n_resblocks >= 1 and n_feats >= 4, got {} and {}",
                self.n_resblocks, self.n_feats
            )));
        }
        Ok(())
    }

    pub fn from_flat(f: &FlatConfig) -> Result<Self> {
        f.check_section("merge", &["n_resblocks", "n_feats", "res_scale", "edge_skip"])?;
        let d = Self::default();
        let cfg = MergeConfig {
            n_resblocks: f.value("merge.n_resblocks", d.n_resblocks)?,
            n_feats: f.value("merge.n_feats", d.n_feats)?,
            res_scale: f.value("merge.res_scale", d.res_scale)?,
            edge_skip: f.value("merge.edge_skip", d.edge_skip)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_flat(&self, f: &mut FlatConfig) {
        f.set("merge.n_resblocks", self.n_resblocks);
        f.set("merge.n_feats", self.n_feats);
        f.set("merge.res_scale", self.res_scale);
        f.set("merge.edge_skip", self.edge_skip);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Module {
    Sr,
    Edge,
    Merge,
}

impl FromStr for Module {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Module::Sr),
            "edge" => Ok(Module::Edge),
            "merge" => Ok(Module::Merge),
            _ => Err(Error::Config(format!("unknown module '{s}' (sr|edge|merge)"))),
        }
    }
}

impl Display for Module {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Module::Sr => "sr",
            Module::Edge => "edge",
            Module::Merge => "merge",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    Bce,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "bce" => Ok(LossKind::Bce),
            _ => Err(Error::Config(format!("unknown loss '{s}' (l1|bce)"))),
        }
    }
}

impl Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            LossKind::L1 => "l1",
            LossKind::Bce => "bce",
        })
    }
}

/// Optimisation settings for one separately trained module.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub module: Module,
    pub batch_size: usize,
    /// Side of the low-resolution training patch.
    pub lr_patch: usize,
    pub scale: usize,
    pub base_lr: f64,
    pub halving_period_epochs: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Loss for the sr and merge modules. The edge branches fix their own
    /// losses (bce for the classifier, l1 for the regressor).
    pub loss: LossKind,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Random 90-degree rotations and flips.
    pub augment: bool,
}

impl TrainConfig {
    /// Desk-scale defaults; learning rates follow the reference settings
    /// (1e-4 halved every 100 epochs for sr/merge, 1e-6 fixed for edge).
    pub fn for_module(module: Module) -> Self {
        TrainConfig {
            module,
            batch_size: 4,
            lr_patch: 24,
            scale: 2,
            base_lr: if module == Module::Edge { 1e-6 } else { 1e-4 },
            halving_period_epochs: 100,
            epochs: 200,
            seed: 0,
            loss: LossKind::L1,
            steps_per_epoch: 50,
            checkpoint_every: 50,
            augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.batch_size == 0 || self.lr_patch == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch_size, lr_patch and steps_per_epoch must be positive".into()));
        }
        if self.halving_period_epochs == 0 {
            return Err(Error::Config("halving_period_epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    /// High-resolution patch side.
    pub fn hr_patch(&self) -> usize {
        self.lr_patch * self.scale
    }

    pub fn from_flat(f: &FlatConfig, module: Module) -> Result<Self> {
        f.check_section(
            "train",
            &[
                "module",
                "batch_size",
                "lr_patch",
                "scale",
                "base_lr",
                "halving_period_epochs",
                "epochs",
                "seed",
                "loss",
                "steps_per_epoch",
                "checkpoint_every",
                "augment",
            ],
        )?;
        let module = f.value("train.module", module)?;
        let d = Self::for_module(module);
        let cfg = TrainConfig {
            module,
            batch_size: f.value("train.batch_size", d.batch_size)?,
            lr_patch: f.value("train.lr_patch", d.lr_patch)?,
            scale: f.value("train.scale", d.scale)?,
            base_lr: f.value("train.base_lr", d.base_lr)?,
            halving_period_epochs: f.value("train.halving_period_epochs", d.halving_period_epochs)?,
            epochs: f.value("train.epochs", d.epochs)?,
            seed: f.value("train.seed", d.seed)?,
            loss: f.value("train.loss", d.loss)?,
            steps_per_epoch: f.value("train.steps_per_epoch", d.steps_per_epoch)?,
            checkpoint_every: f.value("train.checkpoint_every", d.checkpoint_every)?,
            augment: f.value("train.augment", d.augment)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_flat(&self, f: &mut FlatConfig) {
        f.set("train.module", self.module);
        f.set("train.batch_size", self.batch_size);
        f.set("train.lr_patch", self.lr_patch);
        f.set("train.scale", self.scale);
        f.set("train.base_lr", self.base_lr);
        f.set("train.halving_period_epochs", self.halving_period_epochs);
        f.set("train.epochs", self.epochs);
        f.set("train.seed", self.seed);
        f.set("train.loss", self.loss);
        f.set("train.steps_per_epoch", self.steps_per_epoch);
        f.set("train.checkpoint_every", self.checkpoint_every);
        f.set("train.augment", self.augment);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_whitespace() {
        let f = FlatConfig::parse("# header\n sr.n_feats = 8 # inline\n\nsr.pyramid_bins=1,2,3,6\n").unwrap();
        assert_eq!(f.get("sr.n_feats"), Some("8"));
        let cfg = SrConfig::from_flat(&f).unwrap();
        assert_eq!(cfg.n_feats, 8);
        assert_eq!(cfg.pyramid_bins, vec![1, 2, 3, 6]);
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        assert!(matches!(FlatConfig::parse("novalue"), Err(Error::Config(_))));
        assert!(matches!(FlatConfig::parse("a=1\na=2"), Err(Error::Config(_))));
        let f = FlatConfig::parse("sr.n_feets=8").unwrap();
        assert!(matches!(SrConfig::from_flat(&f), Err(Error::Config(_))));
        let f = FlatConfig::parse("sr.n_feats=abc").unwrap();
        assert!(matches!(SrConfig::from_flat(&f), Err(Error::Config(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut f = FlatConfig::new();
        let sr = SrConfig {
            scale: 8,
            res_scale: 0.1,
            ..SrConfig::default()
        };
        sr.write_flat(&mut f);
        EdgeNetConfig::default().write_flat(&mut f);
        MergeConfig::default().write_flat(&mut f);
        let t = TrainConfig::for_module(Module::Merge);
        t.write_flat(&mut f);
        let g = FlatConfig::parse(&f.to_text()).unwrap();
        assert_eq!(SrConfig::from_flat(&g).unwrap(), sr);
        assert_eq!(EdgeNetConfig::from_flat(&g).unwrap(), EdgeNetConfig::default());
        assert_eq!(MergeConfig::from_flat(&g).unwrap(), MergeConfig::default());
        assert_eq!(TrainConfig::from_flat(&g, Module::Sr).unwrap(), t);
    }

    #[test]
    fn validation() {
        let bad = SrConfig {
            n_feats: 10,
            ..SrConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EdgeNetConfig {
            complexities: vec![8, 4],
            ..EdgeNetConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(MergeConfig {
            n_feats: 3,
            ..MergeConfig::default()
        }
        .validate()
        .is_err());
        let mut t = TrainConfig::for_module(Module::Sr);
        t.scale = 3;
        assert!(t.validate().is_err());
    }
}
