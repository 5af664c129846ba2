//! Parameterised building blocks shared by the three networks.

use rand::Rng;

use crate::error::Result;

use super::{Bound, ParamSet, Scalar, Tape, Tensor, Var};

/// A convolution whose weight and bias live in a [`ParamSet`] under
/// `{name}.weight` / `{name}.bias`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Same-extent `k x k` convolution (`pad = k / 2`).
    pub fn same(name: impl Into<String>, in_c: usize, out_c: usize, k: usize) -> Self {
        Conv {
            name: name.into(),
            in_c,
            out_c,
            k,
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn strided(name: impl Into<String>, in_c: usize, out_c: usize, k: usize, stride: usize) -> Self {
        Conv {
            name: name.into(),
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.k, self.k]
    }

    pub fn param_count(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k + self.out_c
    }

    /// Kaiming-uniform (fan-in, ReLU gain) weights and zero bias.
    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut impl Rng) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let bound = (6.0 / fan_in).sqrt() as f32;
        let w = Tensor::from_fn(&self.weight_shape(), |_| rng.random_range(-bound..=bound));
        params.insert(self.weight_name(), w);
        params.insert(self.bias_name(), Tensor::zeros(&[self.out_c]));
    }

    pub fn init_zero(&self, params: &mut ParamSet<f32>) {
        params.insert(self.weight_name(), Tensor::zeros(&self.weight_shape()));
        params.insert(self.bias_name(), Tensor::zeros(&[self.out_c]));
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Bias-free-normalisation residual block: `x + res_scale * conv(relu(conv(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub res_scale: f64,
}

impl ResBlock {
    pub fn new(name: &str, feats: usize, res_scale: f64) -> Self {
        ResBlock {
            conv1: Conv::same(format!("{name}.conv1"), feats, feats, 3),
            conv2: Conv::same(format!("{name}.conv2"), feats, feats, 3),
            res_scale,
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    /// The second conv starts at zero, so a fresh block is the identity.
    pub fn init(&self, params: &mut ParamSet<f32>, rng: &mut impl Rng) {
        self.conv1.init(params, rng);
        self.conv2.init_zero(params);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, p, h)?;
        let h = if self.res_scale == 1.0 {
            h
        } else {
            tape.scale(h, self.res_scale)
        };
        tape.add(x, h)
    }
}
