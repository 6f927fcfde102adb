//! Tensor-level reverse-mode differentiation.
//!
//! Every forward primitive appends one node to the [`Tape`]; node ids are
//! handed out in insertion order, so the tape is always topologically
//! sorted and [`Tape::backward`] is a single reverse sweep.

use std::fmt;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive with a hand-written vector-Jacobian product.
///
/// Used for the structured-posterior operations whose gradients are
/// cheaper in closed form than through elementary primitives.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        input: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        cols: Tensor,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        cols: Tensor,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Conv1d { .. } => "conv1d",
            Op::Conv2d { .. } => "conv2d",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Ordered record of the primitives executed in one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.nodes.iter().map(|n| (n.op.name(), n.value.shape())))
            .finish()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives a gradient but is not a parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a leaf holding the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let var = self.push(store.get(id).value.clone(), Op::Leaf);
        self.nodes[var.0].param = Some(id);
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector along the trailing axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let c = *va.shape().last().unwrap_or(&1);
        if va.ndim() == 0 || vb.shape() != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Mul(a, a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let out = va.reshape(shape).map_err(|_| {
            Error::shape("reshape", format!("{:?} -> {:?}", va.shape(), shape))
        })?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.ndim() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", va.shape())));
        }
        let out = transpose2(va);
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.ndim() || start + len > va.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("{:?} axis {} range {}..{}", va.shape(), axis, start, start + len),
            ));
        }
        let (outer, n, inner) = axis_extents(va.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&va.data()[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Slice { input: a, axis, start }))
    }

    /// Selects `indices` along `axis`; indices may repeat.
    pub fn gather(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.ndim() || indices.iter().any(|&i| i >= va.shape()[axis]) {
            return Err(Error::shape(
                "gather",
                format!("{:?} axis {} indices {:?}", va.shape(), axis, indices),
            ));
        }
        let (outer, n, inner) = axis_extents(va.shape(), axis);
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&va.data()[base..base + inner]);
            }
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = indices.len();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                input: a,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Same-padded 1-D convolution over the time axis.
    ///
    /// `input` is `(N, T, C_in)`, `weight` is `(K, C_in, C_out)`, `bias` is
    /// `(C_out)`; the output is `(N, T, C_out)`. For even `K` the extra tap
    /// looks forward in time.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ndim() != 3 || w.ndim() != 3 || w.shape()[1] != x.shape()[2] || b.shape() != [w.shape()[2]]
        {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let (n, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, cout) = (w.shape()[0], w.shape()[2]);
        let cols = im2col_1d(x.data(), n, t, cin, k);
        let rows = n * t;
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(b.data());
        }
        gemm(rows, k * cin, cout, cols.data(), false, w.data(), false, &mut out, true);
        let out = Tensor::new(vec![n, t, cout], out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            },
        ))
    }

    /// Same-padded, stride-1 2-D convolution.
    ///
    /// `input` is `(B, H, W, C_in)`, `weight` is `(KH, KW, C_in, C_out)`,
    /// `bias` is `(C_out)`; the output is `(B, H, W, C_out)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.ndim() != 4 || w.ndim() != 4 || w.shape()[2] != x.shape()[3] || b.shape() != [w.shape()[3]]
        {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let (bn, h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, cout) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        let cols = im2col_2d(x.data(), bn, h, wd, cin, kh, kw);
        let rows = bn * h * wd;
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(b.data());
        }
        gemm(rows, kh * kw * cin, cout, cols.data(), false, w.data(), false, &mut out, true);
        let out = Tensor::new(vec![bn, h, wd, cout], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            },
        ))
    }

    /// Records a primitive whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called before a forward pass recorded the output".into(),
            ));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Convenience for scalar outputs: seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients> {
        let shape = self
            .nodes
            .get(output.0)
            .map(|n| n.value.shape().to_vec())
            .unwrap_or_default();
        self.backward(output, Tensor::full(&shape, 1.0))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga, false);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, va.data(), true, g.data(), false, &mut gb, false);
                acc(*a, Tensor::new(vec![m, k], ga).unwrap());
                acc(*b, Tensor::new(vec![k, n], gb).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = zip(g, vb, |x, y| x * y);
                let gb = zip(g, va, |x, y| x * y);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddBias(a, b) => {
                let c = val(*b).numel();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (s, x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                acc(*a, g.clone());
                acc(*b, Tensor::vector(gb));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, zip(g, val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Softplus(a) => acc(*a, zip(g, val(*a), |gx, x| gx * sigmoid(x))),
            Op::Tanh(a) => acc(*a, zip(g, &node.value, |gx, y| gx * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, zip(g, &node.value, |gx, y| gx * y)),
            Op::Log(a) => acc(*a, zip(g, val(*a), |gx, x| gx / x)),
            Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape()).unwrap()),
            Op::Transpose(a) => acc(*a, transpose2(g)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let va = val(*a);
                acc(*a, Tensor::full(va.shape(), g.item() / va.numel().max(1) as f64));
            }
            Op::Slice { input, axis, start } => {
                let shape = val(*input).shape();
                let (outer, n, inner) = axis_extents(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut out = Tensor::zeros(shape);
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    out.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*input, out);
            }
            Op::Gather {
                input,
                axis,
                indices,
            } => {
                let shape = val(*input).shape();
                let (outer, n, inner) = axis_extents(shape, *axis);
                let mut out = Tensor::zeros(shape);
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let dst = (o * n + i) * inner;
                        let src = (o * indices.len() + j) * inner;
                        for q in 0..inner {
                            out.data_mut()[dst + q] += g.data()[src + q];
                        }
                    }
                }
                acc(*input, out);
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                cols,
            } => {
                let (x, w) = (val(*input), val(*weight));
                let (n, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (k, cout) = (w.shape()[0], w.shape()[2]);
                let rows = n * t;
                let mut gw = vec![0.0; k * cin * cout];
                gemm(k * cin, rows, cout, cols.data(), true, g.data(), false, &mut gw, false);
                let mut gcols = vec![0.0; rows * k * cin];
                gemm(rows, cout, k * cin, g.data(), false, w.data(), true, &mut gcols, false);
                let gx = col2im_1d(&gcols, n, t, cin, k);
                acc(*input, Tensor::new(x.shape().to_vec(), gx).unwrap());
                acc(*weight, Tensor::new(w.shape().to_vec(), gw).unwrap());
                acc(*bias, Tensor::vector(column_sums(g.data(), cout)));
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            } => {
                let (x, w) = (val(*input), val(*weight));
                let (bn, h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (kh, kw, cout) = (w.shape()[0], w.shape()[1], w.shape()[3]);
                let rows = bn * h * wd;
                let kk = kh * kw * cin;
                let mut gw = vec![0.0; kk * cout];
                gemm(kk, rows, cout, cols.data(), true, g.data(), false, &mut gw, false);
                let mut gcols = vec![0.0; rows * kk];
                gemm(rows, cout, kk, g.data(), false, w.data(), true, &mut gcols, false);
                let gx = col2im_2d(&gcols, bn, h, wd, cin, kh, kw);
                acc(*input, Tensor::new(x.shape().to_vec(), gx).unwrap());
                acc(*weight, Tensor::new(w.shape().to_vec(), gw).unwrap());
                acc(*bias, Tensor::vector(column_sums(g.data(), cout)));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    acc(*v, gi);
                }
            }
        }
    }

    /// Adds every parameter leaf's gradient into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn transpose2(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).unwrap()
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (s, x) in out.iter_mut().zip(row) {
            *s += x;
        }
    }
    out
}

fn im2col_1d(x: &[f64], n: usize, t: usize, cin: usize, k: usize) -> Tensor {
    let pad = (k - 1) / 2;
    let width = k * cin;
    let mut cols = vec![0.0; n * t * width];
    for b in 0..n {
        for s in 0..t {
            let row = &mut cols[(b * t + s) * width..(b * t + s + 1) * width];
            for tap in 0..k {
                let src = s as isize + tap as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let off = (b * t + src as usize) * cin;
                row[tap * cin..(tap + 1) * cin].copy_from_slice(&x[off..off + cin]);
            }
        }
    }
    Tensor::new(vec![n * t, width], cols).unwrap()
}

fn col2im_1d(cols: &[f64], n: usize, t: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let width = k * cin;
    let mut x = vec![0.0; n * t * cin];
    for b in 0..n {
        for s in 0..t {
            let row = &cols[(b * t + s) * width..(b * t + s + 1) * width];
            for tap in 0..k {
                let src = s as isize + tap as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let off = (b * t + src as usize) * cin;
                for c in 0..cin {
                    x[off + c] += row[tap * cin + c];
                }
            }
        }
    }
    x
}

fn im2col_2d(x: &[f64], bn: usize, h: usize, w: usize, cin: usize, kh: usize, kw: usize) -> Tensor {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let width = kh * kw * cin;
    let mut cols = vec![0.0; bn * h * w * width];
    for b in 0..bn {
        for i in 0..h {
            for j in 0..w {
                let r = (b * h + i) * w + j;
                let row = &mut cols[r * width..(r + 1) * width];
                for di in 0..kh {
                    let si = i as isize + di as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = j as isize + dj as isize - pw as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let off = ((b * h + si as usize) * w + sj as usize) * cin;
                        let dst = (di * kw + dj) * cin;
                        row[dst..dst + cin].copy_from_slice(&x[off..off + cin]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![bn * h * w, width], cols).unwrap()
}

fn col2im_2d(
    cols: &[f64],
    bn: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let width = kh * kw * cin;
    let mut x = vec![0.0; bn * h * w * cin];
    for b in 0..bn {
        for i in 0..h {
            for j in 0..w {
                let r = (b * h + i) * w + j;
                let row = &cols[r * width..(r + 1) * width];
                for di in 0..kh {
                    let si = i as isize + di as isize - ph as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sj = j as isize + dj as isize - pw as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let off = ((b * h + si as usize) * w + sj as usize) * cin;
                        let src = (di * kw + dj) * cin;
                        for c in 0..cin {
                            x[off + c] += row[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}
