use crate::error::{Error, Result};

use super::{ParamSet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every parameter, plus the step
/// counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet<T>, config: AdamConfig) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            config,
        }
    }

    /// One bias-corrected update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Alignment(format!(
                "adam needs aligned sets: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
            let m = self.m.get(name)?;
            if name != gname || p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Alignment(format!(
                    "adam parameter '{}' {:?} does not line up with gradient '{}' {:?}",
                    name,
                    p.shape(),
                    gname,
                    g.shape()
                )));
            }
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let (bc1, bc2, eps, lr) = (T::lit(bc1), T::lit(bc2), T::lit(eps), T::lit(lr));

        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name)?;
            for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = b1 * *mi + one_b1 * gi;
            }
            let v = self.v.get_mut(name)?;
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = b2 * *vi + one_b2 * gi * gi;
            }
            let m = self.m.get(name)?;
            let v = self.v.get(name)?;
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
