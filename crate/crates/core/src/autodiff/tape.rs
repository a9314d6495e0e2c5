use std::f32::consts::{LN_2, LOG2_E};

use super::im2col::{self, Conv2dGeometry, Im2colDims};
use super::mode::{with_kernel, KernelSelect, ModeArith, MulKernel, MulMode};
use super::tensor::{broadcast_offsets, broadcast_shape, strides, Tensor};
use super::AutodiffError;
use crate::precision::bf16::gamma_bf16;
use crate::precision::{NumberFormat, RoundingMode};
use crate::pseudo_arith::GammaCorrection;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var, MulMode),
    Div(Var, Var, MulMode),
    MulScalar(Var, f32, MulMode),
    AddScalar(Var),
    MatMul(Var, Var, MulMode),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumAxes(Var),
    BroadcastTo(Var),
    Exp2(Var, MulMode),
    Log2(Var, MulMode),
    Sqrt(Var, MulMode),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Im2col(Var, Conv2dGeometry, Im2colDims),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b, _) | Op::Div(a, b, _) | Op::MatMul(a, b, _) => {
                vec![a, b]
            }
            Op::MulScalar(a, ..)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxes(a)
            | Op::BroadcastTo(a)
            | Op::Exp2(a, _)
            | Op::Log2(a, _)
            | Op::Sqrt(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Pick(a, _)
            | Op::Im2col(a, ..) => vec![a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Every node's inputs precede it, so a reverse sweep over the node list is a
/// valid backward order. Multiplies follow the [`MulMode`] they were recorded
/// with; the tape's number format decides whether multiply operands and
/// products are rounded to bfloat16.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    format: NumberFormat,
    rounding: RoundingMode,
    gamma: GammaCorrection,
    gamma_bf16: GammaCorrection,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// Adds `local` into the gradient slot, moving it in when the slot is empty.
fn accumulate(slot: &mut Option<Vec<f32>>, local: Vec<f32>) {
    match slot {
        None => *slot = Some(local),
        Some(g) => g.iter_mut().zip(&local).for_each(|(g, l)| *g += l),
    }
}

fn prepared<K: MulKernel>(k: K, xs: &[f32]) -> Vec<f32> {
    xs.iter().map(|&x| k.prepare(x)).collect()
}

/// `[m, kk] x [kk, n]`, each output summed in ascending inner index.
fn matmul_forward<K: MulKernel>(k: K, x: &[f32], w: &[f32], m: usize, kk: usize, n: usize) -> Vec<f32> {
    let (px, pw);
    let (x, w) = if k.is_identity_prepare() {
        (x, w)
    } else {
        px = prepared(k, x);
        pw = prepared(k, w);
        (&px[..], &pw[..])
    };
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..kk {
            let a = x[i * kk + p];
            // Zero products cannot change a sum that starts at +0.
            if a == 0.0 {
                continue;
            }
            let wrow = &w[p * n..(p + 1) * n];
            for (o, &b) in orow.iter_mut().zip(wrow) {
                *o += k.mul(a, b);
            }
        }
    }
    out
}

/// Gradient of the left operand: `dx[i, p] = Σ_j grad(x[i, p], w[p, j], up[i, j])`.
fn matmul_grad_lhs<K: MulKernel>(k: K, x: &[f32], w: &[f32], up: &[f32], m: usize, kk: usize, n: usize) -> Vec<f32> {
    let px = prepared(k, x);
    let pup = prepared(k, up);
    let mut wt = vec![0.0f32; kk * n];
    for p in 0..kk {
        for j in 0..n {
            wt[j * kk + p] = k.prepare(w[p * n + j]);
        }
    }
    let mut dx = vec![0.0f32; m * kk];
    for i in 0..m {
        let xrow = &px[i * kk..(i + 1) * kk];
        let drow = &mut dx[i * kk..(i + 1) * kk];
        for j in 0..n {
            let u = pup[i * n + j];
            if u == 0.0 {
                continue;
            }
            let wcol = &wt[j * kk..(j + 1) * kk];
            for ((d, &own), &co) in drow.iter_mut().zip(xrow).zip(wcol) {
                *d += k.grad(own, co, u);
            }
        }
    }
    dx
}

/// Gradient of the right operand: `dw[p, j] = Σ_i grad(w[p, j], x[i, p], up[i, j])`.
fn matmul_grad_rhs<K: MulKernel>(k: K, x: &[f32], w: &[f32], up: &[f32], m: usize, kk: usize, n: usize) -> Vec<f32> {
    let px = prepared(k, x);
    let pw = prepared(k, w);
    let pup = prepared(k, up);
    let mut dw = vec![0.0f32; kk * n];
    for i in 0..m {
        let uprow = &pup[i * n..(i + 1) * n];
        for p in 0..kk {
            let co = px[i * kk + p];
            if co == 0.0 {
                continue;
            }
            let wrow = &pw[p * n..(p + 1) * n];
            let drow = &mut dw[p * n..(p + 1) * n];
            for ((d, &own), &u) in drow.iter_mut().zip(wrow).zip(uprow) {
                *d += k.grad(own, co, u);
            }
        }
    }
    dw
}

fn permuted_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    axes.iter().map(|&a| shape[a]).collect()
}

/// For each output element of a permutation, the offset of its source.
fn permute_sources(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape = permuted_shape(shape, axes);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut index = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        out.push(index.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for axis in (0..out_shape.len()).rev() {
            index[axis] += 1;
            if index[axis] < out_shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            format: NumberFormat::Fp32,
            rounding: RoundingMode::NearestEven,
            gamma: GammaCorrection::default(),
            gamma_bf16: gamma_bf16(),
        }
    }

    /// A tape whose multiplies consume and produce values in `format`.
    pub fn with_format(format: NumberFormat, rounding: RoundingMode) -> Self {
        Self { format, rounding, ..Self::new() }
    }

    /// Scales the γ offset used by a-operations on this tape.
    pub fn set_gamma_multiplier(&mut self, multiplier: f64) {
        self.gamma = GammaCorrection::new(multiplier);
        self.gamma_bf16 = GammaCorrection::with_frac_bits(multiplier, 7);
    }

    pub fn format(&self) -> NumberFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient populated by [`backward`](Self::backward), if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Whether every recorded value and gradient is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.all_finite())
    }

    fn select(&self, mode: MulMode) -> KernelSelect {
        KernelSelect {
            mode,
            format: self.format,
            rounding: self.rounding,
            gamma_fp32: self.gamma.fixed(),
            gamma_bf16: self.gamma_bf16.fixed(),
        }
    }

    fn arith(&self, mode: MulMode) -> ModeArith {
        ModeArith { mode, offset: self.gamma.fixed() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn vals(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn broadcast_binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| shape_err(op, sa, sb))?;
        let (xa, xb) = (self.vals(a), self.vals(b));
        let data = if sa == sb {
            xa.iter().zip(xb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_offsets(&out_shape, sa);
            let ib = broadcast_offsets(&out_shape, sb);
            ia.iter().zip(&ib).map(|(&i, &j)| f(xa[i], xb[j])).collect()
        };
        Tensor::new(out_shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product under `mode`, broadcasting trailing axes.
    pub fn mul(&mut self, a: Var, b: Var, mode: MulMode) -> Result<Var, AutodiffError> {
        let t = with_kernel!(self.select(mode), |k| {
            self.broadcast_binary("mul", a, b, |x, y| k.mul(k.prepare(x), k.prepare(y)))
        })?;
        Ok(self.push(t, Op::Mul(a, b, mode)))
    }

    /// Elementwise quotient under `mode` (e-div / a-div).
    pub fn div(&mut self, a: Var, b: Var, mode: MulMode) -> Result<Var, AutodiffError> {
        let m = self.arith(mode);
        let t = self.broadcast_binary("div", a, b, |x, y| m.div(x, y))?;
        Ok(self.push(t, Op::Div(a, b, mode)))
    }

    /// Product with a constant under `mode`.
    pub fn mul_scalar(&mut self, a: Var, c: f32, mode: MulMode) -> Var {
        let data = with_kernel!(self.select(mode), |k| {
            let pc = k.prepare(c);
            self.vals(a).iter().map(|&x| k.mul(k.prepare(x), pc)).collect()
        });
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::MulScalar(a, c, mode))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let data = self.vals(a).iter().map(|&x| x + c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::AddScalar(a))
    }

    /// `[m, k] x [k, n]` with every scalar product taken under `mode` and
    /// ordinary float accumulation in ascending inner index.
    pub fn matmul(&mut self, x: Var, w: Var, mode: MulMode) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(shape_err("matmul", sx, sw));
        }
        let (m, kk, n) = (sx[0], sx[1], sw[1]);
        let data = with_kernel!(self.select(mode), |k| matmul_forward(k, self.vals(x), self.vals(w), m, kk, n));
        let t = Tensor::new([m, n], data)?;
        Ok(self.push(t, Op::MatMul(x, w, mode)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.vals(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.vals(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.vals(a).len() as f32;
        let s: f32 = self.vals(a).iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    /// Sums over `axes`, keeping them with extent one.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= shape.len()) {
            return Err(AutodiffError::Axis { axis: bad, rank: shape.len() });
        }
        let mut out_shape = shape.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let offsets = broadcast_offsets(&shape, &out_shape);
        let mut out = vec![0.0f32; out_shape.iter().product()];
        for (&o, &x) in offsets.iter().zip(self.vals(a)) {
            out[o] += x;
        }
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::SumAxes(a)))
    }

    /// Explicit broadcast to `shape` under trailing-axis alignment.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        if broadcast_shape(sa, shape).as_deref() != Some(shape) {
            return Err(shape_err("broadcast_to", sa, shape));
        }
        let offsets = broadcast_offsets(shape, sa);
        let xa = self.vals(a);
        let data = offsets.iter().map(|&i| xa[i]).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(t, Op::BroadcastTo(a)))
    }

    /// Base-2 exponential under `mode` (e-exp / a-exp).
    pub fn exp2(&mut self, a: Var, mode: MulMode) -> Var {
        let m = self.arith(mode);
        let data = self.vals(a).iter().map(|&x| m.exp2(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Exp2(a, mode))
    }

    /// Base-2 logarithm under `mode` (e-log / a-log).
    pub fn log2(&mut self, a: Var, mode: MulMode) -> Var {
        let m = self.arith(mode);
        let data = self.vals(a).iter().map(|&x| m.log2(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Log2(a, mode))
    }

    pub fn sqrt(&mut self, a: Var, mode: MulMode) -> Var {
        let m = self.arith(mode);
        let data = self.vals(a).iter().map(|&x| m.sqrt(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Sqrt(a, mode))
    }

    /// Natural exponential: the base-2 kernel applied to `x * log2(e)`, the
    /// scaling multiply taken under `mode`.
    pub fn exp(&mut self, a: Var, mode: MulMode) -> Var {
        let scaled = self.mul_scalar(a, LOG2_E, mode);
        self.exp2(scaled, mode)
    }

    /// Natural logarithm: `log2(x) * ln(2)`, the scaling multiply under `mode`.
    pub fn ln(&mut self, a: Var, mode: MulMode) -> Var {
        let l = self.log2(a, mode);
        self.mul_scalar(l, LN_2, mode)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let mut t = t;
        t.set_grad(None);
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(shape_err("permute", &shape, axes));
        }
        let src = permute_sources(&shape, axes);
        let xa = self.vals(a);
        let data = src.iter().map(|&i| xa[i]).collect();
        let t = Tensor::new(permuted_shape(&shape, axes), data)?;
        Ok(self.push(t, Op::Permute(a, axes.to_vec())))
    }

    /// `out[b, 0] = a[b, indices[b]]` for a `[B, K]` input.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.shape(a);
        if shape.len() != 2 || shape[0] != indices.len() {
            return Err(shape_err("pick", shape, &[indices.len()]));
        }
        let k = shape[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: k });
        }
        let xa = self.vals(a);
        let data = indices.iter().enumerate().map(|(b, &i)| xa[b * k + i]).collect();
        let t = Tensor::new([indices.len(), 1], data)?;
        Ok(self.push(t, Op::Pick(a, indices.to_vec())))
    }

    /// Lowers a `[B, C, H, W]` input to its `[B*OH*OW, C*kh*kw]` patch matrix.
    pub fn im2col(&mut self, a: Var, geometry: Conv2dGeometry) -> Result<Var, AutodiffError> {
        let shape = self.shape(a);
        if shape.len() != 4 {
            return Err(AutodiffError::Rank { op: "im2col", expected: 4, shape: shape.to_vec() });
        }
        let (oh, ow) = geometry.output_hw(shape[2], shape[3])?;
        let dims = Im2colDims { batch: shape[0], channels: shape[1], h: shape[2], w: shape[3], oh, ow };
        let data = im2col::im2col(self.vals(a), &dims, &geometry);
        let t = Tensor::new([dims.rows(), dims.cols(&geometry)], data)?;
        Ok(self.push(t, Op::Im2col(a, geometry, dims)))
    }

    /// Reverse sweep from a one-element `loss`, storing gradients on every
    /// node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let loss_shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalar(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backward_node(idx, &up, &mut grads);
                self.nodes[idx].value.set_grad(Some(up));
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, idx: usize, up: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let out_shape = node.value.shape();
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                for (v, sign) in [(a, false), (b, negate)] {
                    if !self.wants(v) {
                        continue;
                    }
                    let mut g = vec![0.0f32; self.vals(v).len()];
                    let offs = broadcast_offsets(out_shape, self.shape(v));
                    for (&o, &u) in offs.iter().zip(up) {
                        g[o] += if sign { -u } else { u };
                    }
                    accumulate(&mut grads[v.0], g);
                }
            }
            Op::Mul(a, b, mode) => {
                let ia = broadcast_offsets(out_shape, self.shape(a));
                let ib = broadcast_offsets(out_shape, self.shape(b));
                let (xa, xb) = (self.vals(a), self.vals(b));
                with_kernel!(self.select(mode), |k| {
                    for (v, own_offs, own_vals, co_offs, co_vals) in
                        [(a, &ia, xa, &ib, xb), (b, &ib, xb, &ia, xa)]
                    {
                        if !self.wants(v) {
                            continue;
                        }
                        let mut g = vec![0.0f32; own_vals.len()];
                        for ((&io, &ic), &u) in own_offs.iter().zip(co_offs.iter()).zip(up) {
                            let own = k.prepare(own_vals[io]);
                            let co = k.prepare(co_vals[ic]);
                            g[io] += k.grad(own, co, k.prepare(u));
                        }
                        accumulate(&mut grads[v.0], g);
                    }
                });
            }
            Op::MulScalar(a, c, mode) => {
                if self.wants(a) {
                    let g = with_kernel!(self.select(mode), |k| {
                        let pc = k.prepare(c);
                        self.vals(a).iter().zip(up).map(|(&x, &u)| k.grad(k.prepare(x), pc, k.prepare(u))).collect()
                    });
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Div(a, b, mode) => {
                let m = self.arith(mode);
                let ia = broadcast_offsets(out_shape, self.shape(a));
                let ib = broadcast_offsets(out_shape, self.shape(b));
                let (xa, xb) = (self.vals(a), self.vals(b));
                let mut ga = vec![0.0f32; xa.len()];
                let mut gb = vec![0.0f32; xb.len()];
                for k in 0..out.len() {
                    let (da, db) = m.div_grads(xa[ia[k]], xb[ib[k]], out[k], up[k]);
                    ga[ia[k]] += da;
                    gb[ib[k]] += db;
                }
                if self.wants(a) {
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], up.to_vec());
                }
            }
            Op::MatMul(x, w, mode) => {
                let (sx, sw) = (self.shape(x), self.shape(w));
                let (m, kk, n) = (sx[0], sx[1], sw[1]);
                let (vx, vw) = (self.vals(x), self.vals(w));
                with_kernel!(self.select(mode), |k| {
                    if self.wants(x) {
                        accumulate(&mut grads[x.0], matmul_grad_lhs(k, vx, vw, up, m, kk, n));
                    }
                    if self.wants(w) {
                        accumulate(&mut grads[w.0], matmul_grad_rhs(k, vx, vw, up, m, kk, n));
                    }
                });
            }
            Op::Relu(a) => {
                if self.wants(a) {
                    let g = self.vals(a).iter().zip(up).map(|(&x, &u)| if x > 0.0 { u } else { 0.0 }).collect();
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Sum(a) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], vec![up[0]; self.vals(a).len()]);
                }
            }
            Op::Mean(a) => {
                if self.wants(a) {
                    let n = self.vals(a).len();
                    accumulate(&mut grads[a.0], vec![up[0] / n as f32; n]);
                }
            }
            Op::SumAxes(a) => {
                if self.wants(a) {
                    let offs = broadcast_offsets(self.shape(a), out_shape);
                    accumulate(&mut grads[a.0], offs.iter().map(|&o| up[o]).collect());
                }
            }
            Op::BroadcastTo(a) => {
                if self.wants(a) {
                    let mut g = vec![0.0f32; self.vals(a).len()];
                    let offs = broadcast_offsets(out_shape, self.shape(a));
                    for (&o, &u) in offs.iter().zip(up) {
                        g[o] += u;
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Exp2(a, mode) => {
                if self.wants(a) {
                    let m = self.arith(mode);
                    let g = (0..out.len()).map(|k| m.exp2_grad(self.vals(a)[k], out[k], up[k])).collect();
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Log2(a, mode) => {
                if self.wants(a) {
                    let m = self.arith(mode);
                    let g = self.vals(a).iter().zip(up).map(|(&x, &u)| m.log2_grad(x, u)).collect();
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Sqrt(a, mode) => {
                if self.wants(a) {
                    let m = self.arith(mode);
                    let g = (0..out.len()).map(|k| m.sqrt_grad(self.vals(a)[k], out[k], up[k])).collect();
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Permute(a, ref axes) => {
                if self.wants(a) {
                    let src = permute_sources(self.shape(a), axes);
                    let mut g = vec![0.0f32; src.len()];
                    for (&s, &u) in src.iter().zip(up) {
                        g[s] = u;
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Pick(a, ref indices) => {
                if self.wants(a) {
                    let k = self.shape(a)[1];
                    let mut g = vec![0.0f32; self.vals(a).len()];
                    for (b, &i) in indices.iter().enumerate() {
                        g[b * k + i] += up[b];
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Im2col(a, geometry, dims) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], im2col::col2im(up, &dims, &geometry));
                }
            }
        }
    }
}
