//! Train and score MergeNet with and without the edge skip connection
//! under identical data, seed and step budget.

use crate::config::{MergeConfig, Module, TrainConfig};
use crate::error::{Error, Result};
use crate::imageproc::{psnr, ssim, EdgeMap};
use crate::merge_net::MergeNet;
use crate::training::{format_psnr, train_module, Model, TrainData};

#[derive(Clone, Debug, PartialEq)]
pub struct VariantScore {
    pub edge_skip: bool,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub steps: u64,
    /// Metrics of the unmerged SR input, for reference.
    pub input_psnr: f64,
    pub input_ssim: f64,
    pub with_skip: VariantScore,
    pub without_skip: VariantScore,
}

impl AblationReport {
    pub fn psnr_delta(&self) -> f64 {
        self.with_skip.psnr - self.without_skip.psnr
    }

    pub fn ssim_delta(&self) -> f64 {
        self.with_skip.ssim - self.without_skip.ssim
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("edge-skip ablation, {} steps per variant\n", self.steps);
        s.push_str(&format!("{:<22} {:>10} {:>8} {:>12}\n", "variant", "PSNR(dB)", "SSIM", "final loss"));
        s.push_str(&format!(
            "{:<22} {:>10} {:>8.4} {:>12}\n",
            "sr input",
            format_psnr(self.input_psnr),
            self.input_ssim,
            "-"
        ));
        for v in [&self.with_skip, &self.without_skip] {
            let name = if v.edge_skip { "with edge skip" } else { "without edge skip" };
            s.push_str(&format!(
                "{:<22} {:>10} {:>8.4} {:>12.6}\n",
                name,
                format_psnr(v.psnr),
                v.ssim,
                v.final_loss
            ));
        }
        s.push_str(&format!(
            "delta (with - without): PSNR {:+.4} dB, SSIM {:+.4}\n",
            self.psnr_delta(),
            self.ssim_delta()
        ));
        s
    }
}

/// Mean PSNR/SSIM of `net` over the full images of a merge data set.
pub fn score_merge(net: &MergeNet, params: &crate::ParamSet<f32>, eval: &TrainData, scale: usize) -> Result<(f64, f64)> {
    let mut p = 0.0;
    let mut q = 0.0;
    for ex in &eval.examples {
        let [(sr, _), (edge, _), (hr, _)] = ex.images.as_slice() else {
            return Err(Error::Data(format!("merge example '{}' needs (sr, edge, hr)", ex.id)));
        };
        let out = net.infer(params, sr, &EdgeMap::from_image(edge)?)?.quantized();
        p += psnr(&out, hr, scale)?;
        q += ssim(&out, hr)?;
    }
    let n = eval.examples.len() as f64;
    Ok((p / n, q / n))
}

/// Train both variants for `tc.total_steps()` steps and score them on
/// `eval`.
pub fn run_edge_skip_ablation(tc: &TrainConfig, base: &MergeConfig, train: &TrainData, eval: &TrainData) -> Result<AblationReport> {
    if tc.module != Module::Merge || train.module != Module::Merge || eval.module != Module::Merge {
        return Err(Error::Config("the edge-skip ablation trains the merge module".into()));
    }
    if eval.examples.is_empty() {
        return Err(Error::Data("ablation evaluation set is empty".into()));
    }
    let steps = tc.total_steps();
    let mut input_psnr = 0.0;
    let mut input_ssim = 0.0;
    for ex in &eval.examples {
        input_psnr += psnr(&ex.images[0].0, &ex.images[2].0, tc.scale)?;
        input_ssim += ssim(&ex.images[0].0, &ex.images[2].0)?;
    }
    let n = eval.examples.len() as f64;
    let mut scores = Vec::new();
    for edge_skip in [true, false] {
        let cfg = MergeConfig { edge_skip, ..base.clone() };
        let model = Model::merge(&cfg)?;
        log::info!("ablation: training merge net (edge_skip={edge_skip}) for {steps} steps");
        let (ck, losses) = train_module(tc, &model, train, steps)?;
        let net = MergeNet::new(&cfg)?;
        let (p, s) = score_merge(&net, &ck.params, eval, tc.scale)?;
        scores.push(VariantScore {
            edge_skip,
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            psnr: p,
            ssim: s,
        });
    }
    let without_skip = scores.pop().unwrap();
    let with_skip = scores.pop().unwrap();
    Ok(AblationReport {
        steps,
        input_psnr: input_psnr / n,
        input_ssim: input_ssim / n,
        with_skip,
        without_skip,
    })
}
