use crate::error::Result;

use super::{Bound, ParamSet, Tape, Tensor, Var};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Upper bound on coordinates checked per tensor; coordinates are taken
    /// at an even stride so both ends of the buffer are covered.
    pub max_coords_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-6,
            max_coords_per_tensor: usize::MAX,
        }
    }
}

fn eval_scalar<F>(forward: &F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let out = forward(&mut tape, xv)?;
    tape.value(out).item()
}

fn sample_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let step = (n - 1) as f64 / (max - 1).max(1) as f64;
    let mut out: Vec<usize> = (0..max).map(|i| (i as f64 * step).round() as usize).collect();
    out.dedup();
    out
}

/// Largest relative error between the reverse-mode gradient of a scalar
/// `forward(x)` and central finite differences, over every coordinate of
/// `input`.
pub fn grad_check<F>(forward: F, input: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let loss = forward(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));

    let mut worst = 0.0f64;
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval_scalar(&forward, plus)? - eval_scalar(&forward, minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

const KINK_GAP: f64 = 1e-2;

/// Result of checking every tensor of a parameter set.
#[derive(Clone, Debug)]
pub struct ParamCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
    /// Coordinates whose step straddled a kink (forward and backward
    /// slopes disagree); these are judged against the nearer one-sided slope.
    pub kinks: usize,
}

/// Finite-difference check of the gradient of `forward` with respect to
/// every parameter in `params` (plus anything `forward` builds itself).
pub fn grad_check_params<F>(
    forward: F,
    params: &ParamSet<f64>,
    opts: GradCheckOptions,
) -> Result<ParamCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let out = forward(&mut tape, &bound)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic = bound.collect_grads(&tape, &grads);

    let mut report = ParamCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
        kinks: 0,
    };
    let base = eval(params)?;
    for (name, value) in params.iter() {
        let g = analytic.get(name)?;
        for i in sample_coords(value.numel(), opts.max_coords_per_tensor) {
            let mut plus = params.clone();
            plus.get_mut(name)?.data_mut()[i] += opts.h;
            let mut minus = params.clone();
            minus.get_mut(name)?.data_mut()[i] -= opts.h;
            let (fp, fm) = (eval(&plus)?, eval(&minus)?);
            let a = g.data()[i];
            let mut err = relative_error(a, (fp - fm) / (2.0 * opts.h));
            let forward = (fp - base) / opts.h;
            let backward = (base - fm) / opts.h;
            if relative_error(forward, backward) > KINK_GAP {
                report.kinks += 1;
                err = err.min(relative_error(a, forward)).min(relative_error(a, backward));
            }
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
