//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that (transitively) depends on a variable or parameter.
//! Nodes built only from constants are never differentiated.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::gemm::{gemm, View, ViewMut};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// A differentiable map applied independently to every row of a matrix.
pub trait RowOp: Send + Sync + fmt::Debug {
    fn output_width(&self, input_width: usize) -> Result<usize>;
    fn forward_row(&self, x: &[f64], y: &mut [f64]);
    /// Adds `∂L/∂x` into `gx` given `∂L/∂y`.
    fn backward_row(&self, x: &[f64], gy: &[f64], gx: &mut [f64]);
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVector(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    DepthwisePool2d {
        x: Var,
        w: Var,
        b: Var,
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
    },
    RowMap {
        x: Var,
        op: Arc<dyn RowOp>,
    },
    BceWithLogits {
        z: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    track: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// `∂loss/∂v`, or `None` when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `store`'s gradient slots. Parameters
    /// the loss never touched get zero gradients.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (_, t) in store.iter_mut() {
            if t.grad.is_none() {
                t.grad = Some(vec![0.0; t.len()]);
            }
        }
        for (name, v) in &self.params {
            if let (Some(t), Some(g)) = (store.get_mut(name), self.get(*v)) {
                let dst = t.grad.as_mut().expect("initialized above");
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, track: bool) -> Var {
        self.nodes.push(Node { value, op, track });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].track)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let value = Tensor::new(t.shape.clone(), t.values.clone())?;
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(mismatch("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            View::rows(&self.value(a).values, k),
            View::rows(&self.value(b).values, n),
            0.0,
            ViewMut::rows(&mut out, n),
        );
        let track = self.tracked(&[a, b]);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMul(a, b), track))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("elementwise", &ta.shape, &tb.shape));
        }
        let values = ta
            .values
            .iter()
            .zip(&tb.values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape.clone(), values)?;
        let track = self.tracked(&[a, b]);
        Ok(self.push(t, op, track))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            values: ta.values.iter().map(|&x| f(x)).collect(),
            grad: None,
        };
        let track = self.tracked(&[a]);
        self.push(t, op, track)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    /// `relu'(0)` is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// `x` for positive inputs, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values.iter().sum();
        let track = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), track)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.values.iter().sum::<f64>() / t.len().max(1) as f64;
        let track = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), track)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Adds vector `v` (length n) to every row of the m×n matrix `a`.
    pub fn add_row_vector(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.value(v).len() != n {
            return Err(mismatch("add_row_vector", &[m, n], &self.value(v).shape));
        }
        let (ta, tv) = (self.value(a), self.value(v));
        let mut out = ta.values.clone();
        for row in out.chunks_exact_mut(n) {
            add_into(row, &tv.values);
        }
        let t = Tensor::new(ta.shape.clone(), out)?;
        let track = self.tracked(&[a, v]);
        Ok(self.push(t, Op::AddRowVector(a, v), track))
    }

    /// `x·W + b` for `x` n×in, `W` in×out and `b` of length out.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_vector(y, b)
    }

    /// Valid (unpadded) dilated cross-correlation along time.
    ///
    /// `x` is `C_in × T`, `w` is `C_out × C_in × k`, `b` has length `C_out`.
    /// The output is `C_out × (T − (k−1)·dilation)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        let (cin, t) = self.dims(x)?;
        let ws = self.value(w).shape.clone();
        if ws.len() != 3 || ws[1] != cin {
            return Err(mismatch("conv1d weights", &ws, &[cin, t]));
        }
        if dilation == 0 {
            return Err(Error::InvalidConfig("dilation must be positive".into()));
        }
        let (cout, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(mismatch("conv1d bias", &self.value(b).shape, &[cout]));
            }
        }
        let span = (k - 1) * dilation + 1;
        if k == 0 || span > t {
            return Err(Error::KernelLargerThanInput { span, len: t });
        }
        let tout = t - (k - 1) * dilation;
        let mut out = vec![0.0; cout * tout];
        {
            let xv = &self.value(x).values;
            let wv = &self.value(w).values;
            for j in 0..k {
                gemm(
                    cout,
                    cin,
                    tout,
                    1.0,
                    View {
                        data: wv,
                        off: j,
                        rs: cin * k,
                        cs: k,
                    },
                    View {
                        data: xv,
                        off: j * dilation,
                        rs: t,
                        cs: 1,
                    },
                    if j == 0 { 0.0 } else { 1.0 },
                    ViewMut::rows(&mut out, tout),
                );
            }
            if let Some(b) = b {
                let bv = &self.value(b).values;
                for (row, &bias) in out.chunks_exact_mut(tout).zip(bv) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let track = self.tracked(&deps);
        Ok(self.push(
            Tensor::from_rows(cout, tout, out)?,
            Op::Conv1d { x, w, b, dilation },
            track,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if start + len > c {
            return Err(mismatch("slice_cols", &[r, c], &[start, len]));
        }
        let xv = &self.value(x).values;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let track = self.tracked(&[x]);
        Ok(self.push(
            Tensor::from_rows(r, len, out)?,
            Op::SliceCols { x, start },
            track,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if start + len > r {
            return Err(mismatch("slice_rows", &[r, c], &[start, len]));
        }
        let out = self.value(x).values[start * c..(start + len) * c].to_vec();
        let track = self.tracked(&[x]);
        Ok(self.push(
            Tensor::from_rows(len, c, out)?,
            Op::SliceRows { x, start },
            track,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|&p| self.dims(p))
            .collect::<Result<Vec<_>>>()?;
        let r = dims.first().map_or(0, |d| d.0);
        if dims.iter().any(|d| d.0 != r) {
            return Err(Error::ShapeMismatch(
                "concat_cols: row counts differ".into(),
            ));
        }
        let c: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &(_, pc)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).values[i * pc..(i + 1) * pc]);
            }
        }
        let track = self.tracked(parts);
        Ok(self.push(
            Tensor::from_rows(r, c, out)?,
            Op::ConcatCols(parts.to_vec()),
            track,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let dims = parts
            .iter()
            .map(|&p| self.dims(p))
            .collect::<Result<Vec<_>>>()?;
        let c = dims.first().map_or(0, |d| d.1);
        if dims.iter().any(|d| d.1 != c) {
            return Err(Error::ShapeMismatch(
                "concat_rows: column counts differ".into(),
            ));
        }
        let r: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(&self.value(p).values);
        }
        let track = self.tracked(parts);
        Ok(self.push(
            Tensor::from_rows(r, c, out)?,
            Op::ConcatRows(parts.to_vec()),
            track,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(mismatch("gather_rows", &[r, c], &[bad]));
        }
        let xv = &self.value(x).values;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let track = self.tracked(&[x]);
        Ok(self.push(
            Tensor::from_rows(idx.len(), c, out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            track,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        let xv = &self.value(x).values;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let track = self.tracked(&[x]);
        Ok(self.push(Tensor::from_rows(c, r, out)?, Op::Transpose(x), track))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(x).values.clone())?;
        let track = self.tracked(&[x]);
        Ok(self.push(t, Op::Reshape(x), track))
    }

    /// Per-channel strided 2D convolution with a `stride × stride` kernel.
    ///
    /// `x` is `N × (C·H·W)`, `w` is `C × stride²`, `b` has length `C`; the
    /// output is `N × (C·(H/stride)·(W/stride))`.
    #[allow(clippy::too_many_arguments)]
    pub fn depthwise_pool2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        channels: usize,
        (height, width): (usize, usize),
        stride: usize,
    ) -> Result<Var> {
        let (n, cols) = self.dims(x)?;
        if stride == 0 || height % stride != 0 || width % stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "pool stride {stride} must divide {height}x{width}"
            )));
        }
        if cols != channels * height * width {
            return Err(mismatch(
                "depthwise_pool2d input",
                &[n, cols],
                &[channels, height, width],
            ));
        }
        if self.value(w).len() != channels * stride * stride || self.value(b).len() != channels {
            return Err(mismatch(
                "depthwise_pool2d params",
                &self.value(w).shape,
                &[channels, stride * stride],
            ));
        }
        let (oh, ow) = (height / stride, width / stride);
        let ocols = channels * oh * ow;
        let mut out = vec![0.0; n * ocols];
        {
            let (xv, wv, bv) = (
                &self.value(x).values,
                &self.value(w).values,
                &self.value(b).values,
            );
            for s in 0..n {
                for c in 0..channels {
                    let xin = &xv[s * cols + c * height * width..][..height * width];
                    let kern = &wv[c * stride * stride..(c + 1) * stride * stride];
                    let dst = &mut out[s * ocols + c * oh * ow..][..oh * ow];
                    dst.fill(bv[c]);
                    for r in 0..height {
                        let (orow, p) = (r / stride, r % stride);
                        let krow = &kern[p * stride..(p + 1) * stride];
                        let xrow = &xin[r * width..(r + 1) * width];
                        for oc in 0..ow {
                            let xs = &xrow[oc * stride..(oc + 1) * stride];
                            let acc: f64 = xs.iter().zip(krow).map(|(a, b)| a * b).sum();
                            dst[orow * ow + oc] += acc;
                        }
                    }
                }
            }
        }
        let track = self.tracked(&[x, w, b]);
        Ok(self.push(
            Tensor::from_rows(n, ocols, out)?,
            Op::DepthwisePool2d {
                x,
                w,
                b,
                channels,
                height,
                width,
                stride,
            },
            track,
        ))
    }

    pub fn row_map(&mut self, x: Var, op: Arc<dyn RowOp>) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        let oc = op.output_width(c)?;
        let xv = &self.value(x).values;
        let mut out = vec![0.0; r * oc];
        for (xr, yr) in xv
            .chunks_exact(c.max(1))
            .zip(out.chunks_exact_mut(oc.max(1)))
        {
            op.forward_row(xr, yr);
        }
        let track = self.tracked(&[x]);
        Ok(self.push(Tensor::from_rows(r, oc, out)?, Op::RowMap { x, op }, track))
    }

    /// Mean binary cross-entropy of logits `z` against `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, z: Var, targets: &[f64]) -> Result<Var> {
        let zv = &self.value(z).values;
        if zv.len() != targets.len() {
            return Err(mismatch(
                "bce targets",
                &self.value(z).shape,
                &[targets.len()],
            ));
        }
        let n = zv.len().max(1) as f64;
        let loss = zv
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n;
        let track = self.tracked(&[z]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                z,
                targets: targets.to_vec(),
            },
            track,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(Error::NonScalarOutput(out.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.track || matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let params = self.params.iter().map(|(n, v)| (n.clone(), *v)).collect();
        Ok(Gradients { grads, params })
    }

    /// Zeroes `store`'s gradients, then fills them with `∂loss/∂param`.
    pub fn backprop(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        store.zero_grad();
        grads.accumulate_into(store);
        Ok(grads)
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].track {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.values;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = g.len() / m.max(1);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        View::rows(g, n),
                        View::rows_t(val(*b), n),
                        1.0,
                        ViewMut::rows(ga, k),
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        View::rows_t(val(*a), k),
                        View::rows(g, n),
                        1.0,
                        ViewMut::rows(gb, n),
                    );
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::AddRowVector(a, v) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gv) = self.slot(grads, *v) {
                    let n = gv.len();
                    for row in g.chunks_exact(n) {
                        add_into(gv, row);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *d += if *x > 0.0 { *s } else { slope * s };
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.values;
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * y * (1.0 - y);
                    }
                }
            }
            Op::Square(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *d += 2.0 * x * s;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let s = g[0] / ga.len().max(1) as f64;
                    ga.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (cin, t) = self.nodes[x.0].value.dims2().unwrap();
                let ws = &self.nodes[w.0].value.shape;
                let (cout, k) = (ws[0], ws[2]);
                let tout = t - (k - 1) * dilation;
                if let Some(gw) = self.slot(grads, *w) {
                    for j in 0..k {
                        gemm(
                            cout,
                            tout,
                            cin,
                            1.0,
                            View::rows(g, tout),
                            View {
                                data: val(*x),
                                off: j * dilation,
                                rs: 1,
                                cs: t,
                            },
                            1.0,
                            ViewMut {
                                data: gw,
                                off: j,
                                rs: cin * k,
                                cs: k,
                            },
                        );
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..k {
                        gemm(
                            cin,
                            cout,
                            tout,
                            1.0,
                            View {
                                data: val(*w),
                                off: j,
                                rs: k,
                                cs: cin * k,
                            },
                            View::rows(g, tout),
                            1.0,
                            ViewMut {
                                data: gx,
                                off: j * dilation,
                                rs: t,
                                cs: 1,
                            },
                        );
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        for (d, row) in gb.iter_mut().zip(g.chunks_exact(tout)) {
                            *d += row.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.nodes[x.0].value.dims2().unwrap();
                let len = g.len() / r.max(1);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..r {
                        add_into(
                            &mut gx[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (_, c) = self.nodes[x.0].value.dims2().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(&mut gx[start * c..start * c + g.len()], g);
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2().unwrap();
                let mut off = 0;
                for p in parts {
                    let (_, pc) = self.nodes[p.0].value.dims2().unwrap();
                    if let Some(gp) = self.slot(grads, *p) {
                        for i in 0..r {
                            add_into(
                                &mut gp[i * pc..(i + 1) * pc],
                                &g[i * total + off..i * total + off + pc],
                            );
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(gp) = self.slot(grads, *p) {
                        add_into(gp, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::GatherRows { x, idx } => {
                let (_, c) = self.nodes[x.0].value.dims2().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, &src) in idx.iter().enumerate() {
                        add_into(&mut gx[src * c..(src + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.nodes[x.0].value.dims2().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::DepthwisePool2d {
                x,
                w,
                b,
                channels,
                height,
                width,
                stride,
            } => {
                let (channels, height, width, stride) = (*channels, *height, *width, *stride);
                let (n, cols) = self.nodes[x.0].value.dims2().unwrap();
                let (oh, ow) = (height / stride, width / stride);
                let ocols = channels * oh * ow;
                if let Some(gb) = self.slot(grads, *b) {
                    for s in 0..n {
                        for c in 0..channels {
                            gb[c] += g[s * ocols + c * oh * ow..][..oh * ow].iter().sum::<f64>();
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, *w) {
                    let xv = val(*x);
                    for s in 0..n {
                        for c in 0..channels {
                            let xin = &xv[s * cols + c * height * width..][..height * width];
                            let go = &g[s * ocols + c * oh * ow..][..oh * ow];
                            let gk = &mut gw[c * stride * stride..(c + 1) * stride * stride];
                            for r in 0..height {
                                let (orow, p) = (r / stride, r % stride);
                                let xrow = &xin[r * width..(r + 1) * width];
                                for oc in 0..ow {
                                    let go = go[orow * ow + oc];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let xs = &xrow[oc * stride..(oc + 1) * stride];
                                    for (q, xv) in xs.iter().enumerate() {
                                        gk[p * stride + q] += go * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let wv = val(*w);
                    for s in 0..n {
                        for c in 0..channels {
                            let go = &g[s * ocols + c * oh * ow..][..oh * ow];
                            let kern = &wv[c * stride * stride..(c + 1) * stride * stride];
                            let gin = &mut gx[s * cols + c * height * width..][..height * width];
                            for r in 0..height {
                                let (orow, p) = (r / stride, r % stride);
                                for col in 0..width {
                                    let (oc, q) = (col / stride, col % stride);
                                    gin[r * width + col] +=
                                        go[orow * ow + oc] * kern[p * stride + q];
                                }
                            }
                        }
                    }
                }
            }
            Op::RowMap { x, op } => {
                let (_, c) = self.nodes[x.0].value.dims2().unwrap();
                let (_, oc) = node.value.dims2().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    let xv = val(*x);
                    for ((xr, gr), gxr) in xv
                        .chunks_exact(c.max(1))
                        .zip(g.chunks_exact(oc.max(1)))
                        .zip(gx.chunks_exact_mut(c.max(1)))
                    {
                        op.backward_row(xr, gr, gxr);
                    }
                }
            }
            Op::BceWithLogits { z, targets } => {
                if let Some(gz) = self.slot(grads, *z) {
                    let n = targets.len().max(1) as f64;
                    for ((d, &zv), &y) in gz.iter_mut().zip(val(*z)).zip(targets) {
                        *d += g[0] * (sigmoid(zv) - y) / n;
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut store = ParamStore::new();
        store
            .insert("p", t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]))
            .unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let s = g.sum(p);
        g.backprop(s, &mut store).unwrap();
        assert_eq!(
            store.get("p").unwrap().grad.as_ref().unwrap(),
            &vec![1.0; 6]
        );
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let vals = [0.3, -1.2, 2.5, 7.0];
        let mut store = ParamStore::new();
        store.insert("p", t(&[4], &vals)).unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let sq = g.square(p);
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backprop(half, &mut store).unwrap();
        assert_eq!(
            store.get("p").unwrap().grad.as_ref().unwrap(),
            &vals.to_vec()
        );
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut store = ParamStore::new();
        store.insert("a", t(&[1], &[2.0])).unwrap();
        store.insert("b", t(&[1], &[3.0])).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, "a").unwrap();
        let s = g.sum(a);
        g.backprop(s, &mut store).unwrap();
        assert_eq!(store.get("b").unwrap().grad.as_ref().unwrap(), &vec![0.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn relu_values_and_kink() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[-1.0, 2.0, 0.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).values, vec![0.0, 2.0, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn leaky_relu_keeps_a_negative_slope() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[-2.0, 3.0, 0.0]));
        let y = g.leaky_relu(x, 0.25);
        assert_eq!(g.value(y).values, vec![-0.5, 3.0, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.25, 1.0, 0.25]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let w = g.constant(t(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.conv1d(x, w, None, 1).unwrap();
        assert_eq!(g.value(y).values, g.value(x).values);
    }

    #[test]
    fn conv1d_sum_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 10], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 3], 1.0));
        let b = g.constant(t(&[1], &[0.25]));
        let y = g.conv1d(x, w, Some(b), 1).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 8]);
        assert!(g.value(y).values.iter().all(|&v| v == 3.25));
    }

    #[test]
    fn conv1d_kernel_too_large() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 4]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(
            g.conv1d(x, w, None, 2),
            Err(Error::KernelLargerThanInput { span: 5, len: 4 })
        ));
        let w2 = g.constant(Tensor::zeros(&[1, 2, 3]));
        assert!(matches!(
            g.conv1d(x, w2, None, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dense_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.5, -2.0, 0.25]));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = g.constant(t(&[3, 3], &eye));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).values, g.value(x).values);
        let bad = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(x, bad).is_err());
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let mut g = Graph::new();
        let z = g.variable(t(&[1], &[0.0]));
        let l = g.bce_with_logits(z, &[1.0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((sigmoid(-800.0)).is_finite());
    }
}
