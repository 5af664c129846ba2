use crate::error::{dim_err, Error, Result};

use super::kernels;
use super::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Clamp01(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    AvgPool { input: Var, bins: (usize, usize) },
    PixelShuffle { input: Var, r: usize },
    Bilinear(Var),
    Crop { input: Var, top: usize, left: usize },
    Sum(Var),
    Mean(Var),
    L1 { pred: Var, target: Var },
    BceLogits { logits: Var, target: Var },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut p = vec![*input, *weight];
                p.extend(bias.iter().copied());
                p
            }
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Clamp01(x)
            | Op::Scale(x, _)
            | Op::Bilinear(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::AvgPool { input, .. } | Op::PixelShuffle { input, .. } | Op::Crop { input, .. } => {
                vec![*input]
            }
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::L1 { pred, target } => vec![*pred, *target],
            Op::BceLogits { logits, target } => vec![*logits, *target],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only record of a forward pass.
///
/// Parents of node `k` always have indices below `k`, so a single reverse
/// sweep visits the graph in topological order.
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Reverse-mode gradients indexed by tape node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!(
            "{} needs identical shapes, got {:?} and {:?}",
            what,
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            value,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()).min(T::one()));
        self.push(Op::Clamp01(x), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let a = T::lit(alpha);
        let value = self.value(x).map(|v| a * v);
        self.push(Op::Scale(x, alpha), value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = kernels::concat_channels(&tensors)?;
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, bins: (usize, usize)) -> Result<Var> {
        let value = kernels::adaptive_avg_pool_forward(self.value(x), bins)?;
        Ok(self.push(Op::AvgPool { input: x, bins }, value))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(Op::PixelShuffle { input: x, r }, value))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        let value = kernels::bilinear_forward(self.value(x), out_hw)?;
        Ok(self.push(Op::Bilinear(x), value))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, hw: (usize, usize)) -> Result<Var> {
        let value = kernels::crop(self.value(x), top, left, hw)?;
        Ok(self.push(Op::Crop { input: x, top, left }, value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.as_f64()).sum::<f64>();
        self.push(Op::Sum(x), Tensor::scalar(T::lit(s)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(x), Tensor::scalar(T::lit(s)))
    }

    /// Mean absolute error.
    pub fn loss_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("l1 loss", p, t)?;
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .sum::<f64>()
            / p.numel() as f64;
        Ok(self.push(Op::L1 { pred, target }, Tensor::scalar(T::lit(s))))
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(x,0) - t*x + ln(1 + exp(-|x|))`.
    pub fn loss_bce_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (x, t) = (self.value(logits), self.value(target));
        same_shape("bce loss", x, t)?;
        if let Some(bad) = t.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Domain(format!(
                "bce targets must lie in [0,1], found {:?}",
                bad
            )));
        }
        let s = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &t)| {
                let (x, t) = (x.as_f64(), t.as_f64());
                x.max(0.0) - t * x + (-x.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / x.numel() as f64;
        Ok(self.push(Op::BceLogits { logits, target }, Tensor::scalar(T::lit(s))))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "loss node {} is not on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (parent, pg) in self.vjp(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Result<Tensor<T>> {
            Tensor::new(
                a.shape(),
                a.data().iter().zip(g.data()).map(|(&x, &gy)| f(x, gy)).collect(),
            )
        };
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(*input), val(*weight), *stride, *pad, g)?;
                let mut out = vec![(*input, dx), (*weight, dw)];
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::Relu(x) => vec![(
                *x,
                zip_map(val(*x), &|x, gy| if x > T::zero() { gy } else { T::zero() })?,
            )],
            Op::Sigmoid(x) => vec![(
                *x,
                zip_map(&node.value, &|y, gy| gy * y * (T::one() - y))?,
            )],
            Op::Clamp01(x) => vec![(
                *x,
                zip_map(val(*x), &|x, gy| {
                    if x >= T::zero() && x <= T::one() {
                        gy
                    } else {
                        T::zero()
                    }
                })?,
            )],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let mut out = Vec::new();
                if needs(*a) {
                    out.push((*a, zip_map(val(*b), &|y, gy| y * gy)?));
                }
                if needs(*b) {
                    out.push((*b, zip_map(val(*a), &|x, gy| x * gy)?));
                }
                out
            }
            Op::Scale(x, alpha) => {
                let a = T::lit(*alpha);
                vec![(*x, g.map(|v| a * v))]
            }
            Op::Concat(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let c = val(p).shape()[1];
                    if needs(p) {
                        out.push((p, kernels::slice_channels(g, start, c)?));
                    }
                    start += c;
                }
                out
            }
            Op::AvgPool { input, bins } => vec![(
                *input,
                kernels::adaptive_avg_pool_backward(val(*input).shape(), *bins, g)?,
            )],
            Op::PixelShuffle { input, r } => vec![(*input, kernels::pixel_unshuffle(g, *r)?)],
            Op::Bilinear(x) => vec![(*x, kernels::bilinear_backward(val(*x).shape(), g)?)],
            Op::Crop { input, top, left } => {
                let shape = val(*input).shape();
                let (_, _, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let (_, _, ch, cw) = g.dims4()?;
                let mut dx = Tensor::zeros(shape);
                for (dplane, gplane) in dx.data_mut().chunks_mut(h * w).zip(g.data().chunks(ch * cw)) {
                    for y in 0..ch {
                        let row = (top + y) * w + left;
                        dplane[row..row + cw].copy_from_slice(&gplane[y * cw..(y + 1) * cw]);
                    }
                }
                vec![(*input, dx)]
            }
            Op::Sum(x) => {
                let gy = g.data()[0];
                vec![(*x, Tensor::full(val(*x).shape(), gy))]
            }
            Op::Mean(x) => {
                let v = val(*x);
                let gy = g.data()[0] / T::lit(v.numel() as f64);
                vec![(*x, Tensor::full(v.shape(), gy))]
            }
            Op::L1 { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let k = g.data()[0] / T::lit(p.numel() as f64);
                let sign: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        if a > b {
                            k
                        } else if a < b {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let dp = Tensor::new(p.shape(), sign)?;
                let mut out = Vec::new();
                if needs(*target) {
                    out.push((*target, dp.map(|v| -v)));
                }
                out.push((*pred, dp));
                out
            }
            Op::BceLogits { logits, target } => {
                let (x, t) = (val(*logits), val(*target));
                let k = g.data()[0] / T::lit(x.numel() as f64);
                let mut out = Vec::new();
                if needs(*logits) {
                    let d = x
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(&x, &t)| k * (sigmoid(x) - t))
                        .collect();
                    out.push((*logits, Tensor::new(x.shape(), d)?));
                }
                if needs(*target) {
                    out.push((*target, x.map(|v| -k * v)));
                }
                out
            }
        })
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
