//! PSNR/SSIM over filename-matched prediction and ground-truth folders.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageproc::{load_png, psnr, ssim, PSNR_INF_LABEL};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub scale: usize,
    pub rows: Vec<BenchmarkRow>,
}

pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        PSNR_INF_LABEL.to_string()
    } else {
        format!("{v:.4}")
    }
}

impl BenchmarkReport {
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    /// Aligned plain-text table with a trailing mean row.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = format!("{:<width$}  {:>10}  {:>8}\n", "image", "PSNR(dB)", "SSIM");
        for r in &self.rows {
            s.push_str(&format!("{:<width$}  {:>10}  {:>8.4}\n", r.name, format_psnr(r.psnr), r.ssim));
        }
        s.push_str(&format!(
            "{:<width$}  {:>10}  {:>8.4}\n",
            "mean",
            format_psnr(self.mean_psnr()),
            self.mean_ssim()
        ));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim\n");
        for r in self.rows.iter() {
            s.push_str(&format!("{},{},{:.6}\n", r.name, format_psnr(r.psnr), r.ssim));
        }
        s.push_str(&format!("mean,{},{:.6}\n", format_psnr(self.mean_psnr()), self.mean_ssim()));
        s
    }
}

fn png_set(dir: &Path) -> Result<BTreeSet<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeSet::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            out.insert(name);
        }
    }
    Ok(out)
}

/// Per-image and mean metrics. Unmatched filenames on either side are a
/// data error listing every orphan.
pub fn evaluate_benchmark(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, scale: usize) -> Result<BenchmarkReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let pred = png_set(pred_dir)?;
    let gt = png_set(gt_dir)?;
    let orphans: Vec<String> = pred
        .symmetric_difference(&gt)
        .map(|n| {
            let side = if pred.contains(n) { pred_dir } else { gt_dir };
            side.join(n).display().to_string()
        })
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Data(format!("unmatched files:\n  {}", orphans.join("\n  "))));
    }
    if pred.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", pred_dir.display())));
    }
    let mut rows = Vec::with_capacity(pred.len());
    for name in &pred {
        let a = load_png(pred_dir.join(name))?;
        let b = load_png(gt_dir.join(name))?;
        rows.push(BenchmarkRow {
            name: name.clone(),
            psnr: psnr(&a, &b, scale)?,
            ssim: ssim(&a, &b)?,
        });
    }
    Ok(BenchmarkReport { scale, rows })
}
