//! Loading trained stages and running LR -> SR -> edge -> merged output.

use std::path::{Path, PathBuf};

use crate::autodiff::ParamSet;
use crate::config::{EdgeNetConfig, FlatConfig, MergeConfig, SrConfig};
use crate::edge_net::{Branch, EdgeEnsemble, EnsembleMember};
use crate::error::{Error, Result};
use crate::imageproc::{EdgeMap, ImageBuffer};
use crate::merge_net::MergeNet;
use crate::sr_net::SrNet;
use crate::training::load_checkpoint;

fn expect_kind(cfg: &FlatConfig, kind: &str, path: &Path) -> Result<()> {
    match cfg.get("model.kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Config(format!(
            "{} holds a '{}' model, expected '{kind}'",
            path.display(),
            other.unwrap_or("unknown")
        ))),
    }
}

pub fn load_sr(path: impl AsRef<Path>) -> Result<(SrNet, ParamSet<f32>)> {
    let path = path.as_ref();
    let ck = load_checkpoint(path)?;
    expect_kind(&ck.config, "sr", path)?;
    let net = SrNet::new(&SrConfig::from_flat(&ck.config)?)?;
    Ok((net, ck.params))
}

pub fn load_merge(path: impl AsRef<Path>) -> Result<(MergeNet, ParamSet<f32>, Option<usize>)> {
    let path = path.as_ref();
    let ck = load_checkpoint(path)?;
    expect_kind(&ck.config, "merge", path)?;
    let net = MergeNet::new(&MergeConfig::from_flat(&ck.config)?)?;
    let scale = ck.config.get("train.scale").and_then(|s| s.parse().ok());
    Ok((net, ck.params, scale))
}

/// Manifest lines are `member.<nr>.<branch>=<checkpoint path>`; relative
/// paths resolve against the manifest's directory.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(usize, Branch, PathBuf)]) -> Result<()> {
    let path = path.as_ref();
    let mut f = FlatConfig::new();
    for (nr, branch, p) in entries {
        f.set(format!("member.{nr}.{branch}"), p.display());
    }
    std::fs::write(path, f.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_edge_ensemble(manifest: impl AsRef<Path>) -> Result<EdgeEnsemble> {
    let manifest = manifest.as_ref();
    let f = FlatConfig::load(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut members: Vec<EnsembleMember> = Vec::new();
    let mut keys: Vec<(usize, Branch, String)> = Vec::new();
    for key in f.keys() {
        let parts: Vec<&str> = key.split('.').collect();
        let parsed = match parts.as_slice() {
            ["member", nr, branch] => nr.parse::<usize>().ok().zip(branch.parse::<Branch>().ok()),
            _ => None,
        };
        let (nr, branch) =
            parsed.ok_or_else(|| Error::Config(format!("{}: bad manifest key '{key}'", manifest.display())))?;
        keys.push((nr, branch, f.get(key).unwrap_or("").to_string()));
    }
    if keys.is_empty() {
        return Err(Error::Config(format!("{}: manifest lists no members", manifest.display())));
    }
    keys.sort();
    for (nr, branch, rel) in keys {
        let path = base.join(&rel);
        let ck = load_checkpoint(&path)?;
        expect_kind(&ck.config, "edge", &path)?;
        let cfg = EdgeNetConfig::from_flat(&ck.config)?;
        if cfg.nr != nr || ck.config.get("model.branch") != Some(&branch.to_string()) {
            return Err(Error::Config(format!(
                "{} does not hold the nr={nr} {branch} branch named in the manifest",
                path.display()
            )));
        }
        if members.last().map(|m| m.cfg.nr) != Some(nr) {
            members.push(EnsembleMember {
                cfg: cfg.clone(),
                classifier: None,
                regressor: None,
            });
        }
        let m = members.last_mut().unwrap();
        if m.cfg != cfg {
            return Err(Error::Config(format!("nr={nr} branches disagree on the architecture")));
        }
        match branch {
            Branch::Classifier => m.classifier = Some(ck.params),
            Branch::Regressor => m.regressor = Some(ck.params),
        }
    }
    Ok(EdgeEnsemble { members })
}

/// Checkpoint locations for the three stages.
#[derive(Clone, Debug, Default)]
pub struct PipelinePaths {
    pub sr_ckpt: PathBuf,
    pub edge_manifest: PathBuf,
    pub merge_ckpt: PathBuf,
}

/// The three loaded stages.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub sr: (SrNet, ParamSet<f32>),
    pub edge: EdgeEnsemble,
    pub merge: (MergeNet, ParamSet<f32>),
}

/// Intermediate and final images of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub sr: ImageBuffer,
    pub edge: EdgeMap,
    pub output: ImageBuffer,
}

pub fn check_sr_scale(net: &SrNet, scale: usize) -> Result<()> {
    if net.cfg.scale != scale {
        return Err(Error::Config(format!(
            "sr checkpoint was trained for x{} but x{scale} was requested",
            net.cfg.scale
        )));
    }
    Ok(())
}

/// 8-bit round trip, so in-memory hand-offs equal those through PNG files.
pub fn quantize_edge(edge: &EdgeMap) -> Result<EdgeMap> {
    EdgeMap::from_image(&edge.plane().to_image().quantized())
}

impl Pipeline {
    /// Load and validate every stage before any computation.
    pub fn load(paths: &PipelinePaths, scale: usize) -> Result<Self> {
        let sr = load_sr(&paths.sr_ckpt)?;
        check_sr_scale(&sr.0, scale)?;
        let edge = load_edge_ensemble(&paths.edge_manifest)?;
        let (net, params, trained) = load_merge(&paths.merge_ckpt)?;
        if let Some(t) = trained.filter(|&t| t != scale) {
            return Err(Error::Config(format!(
                "merge checkpoint was trained for x{t} but x{scale} was requested"
            )));
        }
        Ok(Pipeline {
            sr,
            edge,
            merge: (net, params),
        })
    }

    pub fn run(&self, lr: &ImageBuffer) -> Result<PipelineOutput> {
        let sr = self.sr.0.infer(&self.sr.1, lr)?.quantized();
        let edge = quantize_edge(&self.edge.predict(&sr)?)?;
        let output = self.merge.0.infer(&self.merge.1, &sr, &edge)?.quantized();
        Ok(PipelineOutput { sr, edge, output })
    }
}

pub fn run_full_pipeline(lr: &ImageBuffer, paths: &PipelinePaths, scale: usize) -> Result<PipelineOutput> {
    Pipeline::load(paths, scale)?.run(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Module, TrainConfig};
    use crate::training::{initial_checkpoint, Model};

    fn write_stages(dir: &Path, scale: usize, zero_edge: bool) -> PipelinePaths {
        let tc = TrainConfig {
            scale,
            ..TrainConfig::for_module(Module::Sr)
        };
        let sr = Model::sr(&SrConfig {
            n_resblocks: 1,
            n_feats: 8,
            scale,
            ..SrConfig::default()
        })
        .unwrap();
        initial_checkpoint(&tc, &sr).save(dir.join("sr.srew")).unwrap();
        let mut entries = vec![];
        for nr in [2, 4] {
            for b in Branch::ALL {
                let m = Model::edge(&EdgeNetConfig::default().with_nr(nr), b).unwrap();
                let mut ck = initial_checkpoint(&TrainConfig::for_module(Module::Edge), &m);
                if zero_edge {
                    for (_, t) in ck.params.iter_mut() {
                        t.data_mut().fill(0.0);
                    }
                }
                let name = format!("edge_{nr}_{b}.srew");
                ck.save(dir.join(&name)).unwrap();
                if !(zero_edge && b == Branch::Regressor) {
                    entries.push((nr, b, PathBuf::from(name)));
                }
            }
        }
        write_manifest(dir.join("edge.manifest"), &entries).unwrap();
        let mtc = TrainConfig {
            scale,
            ..TrainConfig::for_module(Module::Merge)
        };
        let merge = Model::merge(&MergeConfig {
            n_resblocks: 1,
            n_feats: 4,
            ..MergeConfig::default()
        })
        .unwrap();
        initial_checkpoint(&mtc, &merge).save(dir.join("merge.srew")).unwrap();
        PipelinePaths {
            sr_ckpt: dir.join("sr.srew"),
            edge_manifest: dir.join("edge.manifest"),
            merge_ckpt: dir.join("merge.srew"),
        }
    }

    #[test]
    fn shapes_and_zero_edge_ensemble() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_stages(dir.path(), 8, true);
        let lr = ImageBuffer::from_fn(3, 12, 12, |c, y, x| ((c + x + y) % 5) as f32 / 5.0).unwrap();
        let out = run_full_pipeline(&lr, &paths, 8).unwrap();
        assert_eq!(out.sr.hw(), (96, 96));
        assert_eq!(out.edge.hw(), (96, 96));
        assert_eq!(out.output.hw(), (96, 96));
        // 0.5 survives the 8-bit hand-off as 128/255
        assert!(out.edge.data.iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn scale_mismatch_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_stages(dir.path(), 2, false);
        assert!(matches!(Pipeline::load(&paths, 4), Err(Error::Config(_))));
        let ens = load_edge_ensemble(&paths.edge_manifest).unwrap();
        assert_eq!(ens.members.len(), 2);
        assert!(ens.members.iter().all(|m| m.classifier.is_some() && m.regressor.is_some()));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.txt");
        std::fs::write(&m, "member.4.sideways=x.srew\n").unwrap();
        assert!(matches!(load_edge_ensemble(&m), Err(Error::Config(_))));
        std::fs::write(&m, "member.4.classifier=missing.srew\n").unwrap();
        assert!(matches!(load_edge_ensemble(&m), Err(Error::Io { .. })));
    }
}
