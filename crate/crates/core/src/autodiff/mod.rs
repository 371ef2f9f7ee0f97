//! Define-by-run reverse-mode differentiation over the small operator set the
//! model needs: convolutions, pointwise nonlinearities, elementwise arithmetic,
//! channel concat/slice, and the finite-difference stencils as fixed linear
//! maps whose adjoints are the transposed stencils.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward sweep is a reverse scan.

mod adam;
mod conv;
mod gradcheck;
mod tensor;

use std::collections::BTreeMap;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d, ConvLayer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::fdops::LineStencil;
use conv::{gemm, ConvGeometry};

/// Named parameter tensors, ordered by name.
pub type ParamStore = BTreeMap<String, Tensor>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Validation(format!("unknown activation {other:?} (tanh, relu)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ChannelAffine { a: Var, scale: Vec<f64> },
    ScaleBy { a: Var, s: Var },
    Activation(Var, Activation),
    Softplus(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geo: ConvGeometry,
        cols: Option<Vec<f64>>,
    },
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Stencil(Var, LineStencil),
    Sum(Var),
    Mean(Var),
    MeanAbs(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Tape of nodes built during one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient for a registered parameter; absent if the parameter does not
    /// influence the loss or was never registered as trainable.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Trainable leaf reported by name in [`Gradients`].
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        let v = self.push(Op::Leaf, t, true);
        self.params.push((name.into(), v));
        v
    }

    /// Registers every tensor of `store`, trainable or as constants.
    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> BTreeMap<String, Var> {
        store
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    self.param(name.clone(), t.clone())
                } else {
                    self.input(t.clone())
                };
                (name.clone(), v)
            })
            .collect()
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), t, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), t, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), t, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), t, rg)
    }

    /// `y[c] = scale[c]·a[c] + shift[c]` for each slice `c` of the leading dimension.
    pub fn channel_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let t = self.value(a);
        let lead = t.shape().first().copied().unwrap_or(0);
        if scale.len() != lead || shift.len() != lead {
            return Err(Error::Shape(format!(
                "channel_affine: {} scales and {} shifts for {lead} channels",
                scale.len(),
                shift.len()
            )));
        }
        let inner = t.len() / lead.max(1);
        let data = t.data().iter().enumerate().map(|(i, &x)| scale[i / inner] * x + shift[i / inner]).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(
            Op::ChannelAffine {
                a,
                scale: scale.to_vec(),
            },
            out,
            rg,
        ))
    }

    /// Tensor `a` times the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::Shape("scale_by expects a single-element scale".into()));
        }
        let c = self.value(s).data()[0];
        let t = self.unary(a, |x| x * c);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Op::ScaleBy { a, s }, t, rg))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = match kind {
            Activation::Tanh => self.unary(a, f64::tanh),
            Activation::Relu => self.unary(a, |x| x.max(0.0)),
        };
        let rg = self.rg(a);
        self.push(Op::Activation(a, kind), t, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// `ln(1 + e^x)`, the nonnegativity map for diffusivities.
    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.unary(a, softplus);
        let rg = self.rg(a);
        self.push(Op::Softplus(a), t, rg)
    }

    /// Same-size cross-correlation of a `[C_in,H,W]` input with replicate padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let geo = ConvGeometry::from(self.value(input), self.value(weight), self.value(bias))?;
        let cols = geo.im2col(self.value(input).data());
        let out = geo.forward(&cols, self.value(weight).data(), self.value(bias).data());
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let keep = if self.rg(weight) { Some(cols) } else { None };
        let t = Tensor::new(vec![geo.c_out, geo.h, geo.w], out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
                cols: keep,
            },
            t,
            rg,
        ))
    }

    /// Concatenates along the leading dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::Shape(format!("concat: {:?} vs trailing {:?}", t.shape(), tail)));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), t, rg))
    }

    /// Rows `start..start+len` of the leading dimension.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let lead = t.shape()[0];
        if start + len > lead || len == 0 {
            return Err(Error::Shape(format!("slice {start}..{} of leading dim {lead}", start + len)));
        }
        let inner: usize = t.shape()[1..].iter().product();
        let data = t.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let rg = self.rg(a);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Slice { a, start }, t, rg))
    }

    /// Applies a finite-difference line stencil to every channel.
    pub fn stencil(&mut self, a: Var, st: LineStencil) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            data.extend(st.apply(&src[ch * h * w..(ch + 1) * h * w], h, w));
        }
        let rg = self.rg(a);
        let t = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(Op::Stencil(a, st), t, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    /// Mean of `|a|`, the mean-reduced L1 norm.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().map(|v| v.abs()).sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Op::MeanAbs(a), Tensor::scalar(s), rg)
    }

    /// Reverse sweep from a scalar `loss`. Inputs and parameters are untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", root.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = self
            .params
            .iter()
            .filter_map(|(name, v)| grads[v.0].clone().map(|g| (name.clone(), g)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn map_grad(&self, g: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
        let data = g.data().iter().enumerate().map(|(i, &x)| f(i, x)).collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, self.map_grad(g, |_, x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.map_grad(g, |i, x| x * vb[i]));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.map_grad(g, |i, x| x * va[i]));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, self.map_grad(g, |_, x| x * c)),
            Op::ChannelAffine { a, scale } => {
                let inner = g.len() / scale.len();
                self.accumulate(grads, *a, self.map_grad(g, |i, x| x * scale[i / inner]));
            }
            Op::ScaleBy { a, s } => {
                let c = self.value(*s).data()[0];
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.map_grad(g, |_, x| x * c));
                }
                if self.rg(*s) {
                    let va = self.value(*a).data();
                    let ds: f64 = g.data().iter().zip(va).map(|(x, y)| x * y).sum();
                    let shape = self.value(*s).shape().to_vec();
                    self.accumulate(grads, *s, Tensor::new(shape, vec![ds]).expect("scalar"));
                }
            }
            Op::Activation(a, kind) => {
                let y = node.value.data();
                let x = self.value(*a).data();
                let d = match kind {
                    Activation::Tanh => self.map_grad(g, |i, v| v * (1.0 - y[i] * y[i])),
                    Activation::Relu => self.map_grad(g, |i, v| if x[i] > 0.0 { v } else { 0.0 }),
                };
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, self.map_grad(g, |i, v| v * sigmoid(x[i])));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
                cols,
            } => {
                let n = geo.pixels();
                let k = geo.patch();
                let gout = g.data();
                if self.rg(*bias) {
                    let db: Vec<f64> = gout.chunks(n).map(|c| c.iter().sum()).collect();
                    self.accumulate(grads, *bias, Tensor::new(vec![geo.c_out], db).expect("bias"));
                }
                if self.rg(*weight) {
                    let cols = cols.as_ref().expect("columns kept when the kernel needs a gradient");
                    let mut dw = vec![0.0; geo.c_out * k];
                    // dW[o, r] = Σ_p gout[o, p] · cols[r, p]
                    gemm(geo.c_out, n, k, gout, (n, 1), cols, (1, n), 0.0, &mut dw);
                    let shape = self.value(*weight).shape().to_vec();
                    self.accumulate(grads, *weight, Tensor::new(shape, dw).expect("kernel"));
                }
                if self.rg(*input) {
                    let w = self.value(*weight).data();
                    let mut dcols = vec![0.0; k * n];
                    // dCols[r, p] = Σ_o W[o, r] · gout[o, p]
                    gemm(k, geo.c_out, n, w, (1, k), gout, (n, 1), 0.0, &mut dcols);
                    let mut din = vec![0.0; geo.c_in * n];
                    geo.col2im_add(&dcols, &mut din);
                    let shape = self.value(*input).shape().to_vec();
                    self.accumulate(grads, *input, Tensor::new(shape, din).expect("input"));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let len = t.len();
                    if self.rg(p) {
                        let d = Tensor::new(t.shape().to_vec(), g.data()[offset..offset + len].to_vec());
                        self.accumulate(grads, p, d.expect("concat part"));
                    }
                    offset += len;
                }
            }
            Op::Slice { a, start } => {
                let src = self.value(*a);
                let inner: usize = src.shape()[1..].iter().product();
                let mut d = Tensor::zeros(src.shape());
                d.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::Stencil(a, st) => {
                let (c, h, w) = g.chw().expect("stencil output is CHW");
                let mut d = Tensor::zeros(g.shape());
                for ch in 0..c {
                    let r = ch * h * w..(ch + 1) * h * w;
                    st.apply_transpose_into(&g.data()[r.clone()], h, w, &mut d.data_mut()[r]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.data()[0] / t.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(t.shape(), s));
            }
            Op::MeanAbs(a) => {
                let t = self.value(*a);
                let s = g.data()[0] / t.len() as f64;
                let x = t.data();
                let d = self.map_grad(t, |i, _| s * x[i].signum() * (x[i] != 0.0) as u8 as f64);
                self.accumulate(grads, *a, d);
            }
        }
    }
}
