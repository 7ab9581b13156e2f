//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order. Because nodes can
//! only reference earlier nodes, the tape order is already a topological
//! order, and [`Graph::backward`] walks it in reverse exactly once.
//!
//! Parameters are never copied into the tape: a parameter leaf borrows its
//! value from the [`ParamStore`] the graph was created with, and requesting the
//! same parameter twice yields the same [`Var`], so gradients from shared
//! weights accumulate on one node.

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{col2im3, gemm, im2col3, Mat};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: usize,
        k: usize,
        b: usize,
        cols: Vec<f64>,
        batch: usize,
        cin: usize,
        cout: usize,
        hw: (usize, usize),
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    Softmax {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        shift: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    Reshape(usize),
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    Cosine {
        a: usize,
        b: usize,
        eps: f64,
        na: Vec<f64>,
        nb: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddConst(_) => "add_const",
            Op::Relu(_) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Cosine { .. } => "cosine",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    // None for parameter leaves, whose values live in the store.
    value: Option<Vec<f64>>,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
    poisoned: Option<&'static str>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to an input leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.nodes[*n].as_deref())
    }

    /// Writes parameter gradients into `Parameter::grad`; parameters that did
    /// not take part in the graph get zero.
    pub fn write_to(&self, store: &mut ParamStore) {
        store.zero_grads();
        for (id, node) in &self.params {
            if let Some(g) = &self.nodes[*node] {
                store.get_mut(*id).grad.data_mut().copy_from_slice(g);
            }
        }
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let width = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / width, width)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contrib: Vec<f64>) {
    match &mut grads[idx] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(&contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn accumulate_with(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = grads[idx].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            poisoned: None,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First operation that produced a non-finite value, if any.
    pub fn non_finite_op(&self) -> Option<&'static str> {
        self.poisoned
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.poisoned.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.poisoned = Some(op.name());
        }
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.store.value(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shapes are valid")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(n) = self.param_nodes[id.index()] {
            return Var(n);
        }
        let shape = self.store.value(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(id),
        });
        let n = self.nodes.len() - 1;
        self.param_nodes[id.index()] = Some(n);
        Var(n)
    }

    /// `x[..., n] * w[m, n]^T + b[m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return shape_err("linear", format!("weight must be 2-D, got {ws:?}"));
        }
        let (m, n) = (ws[0], ws[1]);
        let (rows, width) = rows_of(self.shape(x));
        if width != n {
            return shape_err("linear", format!("input width {width} vs weight {ws:?}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return shape_err("linear", format!("bias {:?} vs {m} outputs", self.shape(b)));
            }
        }
        let mut out = vec![0.0; rows * m];
        gemm(
            Mat::new(self.value(x), rows, n),
            Mat::new(self.value(w), m, n).t(),
            0.0,
            &mut out,
            m,
            1,
        );
        if let Some(b) = b {
            let bias = self.value(b);
            for row in out.chunks_mut(m) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = m;
        Ok(self.push(
            shape,
            out,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
            },
        ))
    }

    /// 3x3 cross-correlation with zero padding 1 over `[batch, cin, h, w]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return shape_err("conv2d", format!("input {xs:?}, kernel {ks:?}"));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[0];
        if ks[1] != cin {
            return shape_err("conv2d", format!("input has {cin} channels, kernel expects {}", ks[1]));
        }
        if self.shape(b) != [cout] {
            return shape_err("conv2d", format!("bias {:?} vs {cout} filters", self.shape(b)));
        }
        let hw = h * w;
        let width = cin * 9;
        let mut cols = vec![0.0; batch * hw * width];
        let xv = self.value(x);
        for bi in 0..batch {
            im2col3(
                &xv[bi * cin * hw..(bi + 1) * cin * hw],
                cin,
                h,
                w,
                &mut cols[bi * hw * width..(bi + 1) * hw * width],
            );
        }
        let mut out = vec![0.0; batch * cout * hw];
        let kv = self.value(k);
        let bias = self.value(b);
        for bi in 0..batch {
            let dst = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            for (co, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(bias[co]);
            }
            gemm(
                Mat::new(kv, cout, width),
                Mat::new(&cols[bi * hw * width..(bi + 1) * hw * width], hw, width).t(),
                1.0,
                dst,
                hw,
                1,
            );
        }
        Ok(self.push(
            vec![batch, cout, h, w],
            out,
            Op::Conv2d {
                x: x.0,
                k: k.0,
                b: b.0,
                cols,
                batch,
                cin,
                cout,
                hw: (h, w),
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a.0, b.0)))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let n = self.value(row).len();
        let total = self.value(x).len();
        if !total.is_multiple_of(n) {
            return shape_err(name, format!("{:?} does not tile {:?}", self.shape(row), self.shape(x)));
        }
        let rv = self.value(row);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&a, &b)| f(a, b)))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, op))
    }

    /// Adds `row` to every consecutive block of `row.numel()` values of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, |a, b| a + b, Op::AddRow(x.0, row.0))
    }

    /// Multiplies every consecutive block of `row.numel()` values of `x` by `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, |a, b| a * b, Op::MulRow(x.0, row.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x.0, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddConst(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu(x.0))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("softmax", format!("axis {axis} out of range for {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| xv[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (xv[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x: x.0, outer, len, inner }))
    }

    /// Layer normalization over the last axis (epsilon 1e-5), then `gain * x + shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (rows, d) = rows_of(self.shape(x));
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return shape_err(
                "layer_norm",
                format!("width {d}, gain {:?}, shift {:?}", self.shape(gain), self.shape(shift)),
            );
        }
        let xv = self.value(x);
        let (gv, sv) = (self.value(gain), self.value(shift));
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                xhat[r * d + j] = xh;
                out[r * d + j] = gv[j] * xh + sv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                shift: shift.0,
                xhat,
                inv_std,
            },
        ))
    }

    /// Multi-head scaled dot-product attention without masking.
    ///
    /// `q`, `k`, `v` are `[batch * seq, d]`, rows grouped by sequence. Head `h`
    /// uses columns `h * d / heads .. (h + 1) * d / heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, d) = rows_of(self.shape(q));
        if heads == 0 || d % heads != 0 {
            return Err(NnError::Config(format!("width {d} not divisible by {heads} heads")));
        }
        if seq == 0 || rows % seq != 0 {
            return shape_err("attention", format!("{rows} rows do not split into sequences of {seq}"));
        }
        let batch = rows / seq;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        let mut logits = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &qv[(b * seq + i) * d + off..][..dh];
                    for (j, l) in logits.iter_mut().enumerate() {
                        let kj = &kv[(b * seq + j) * d + off..][..dh];
                        *l = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut total = 0.0;
                    for (pj, l) in p.iter_mut().zip(&logits) {
                        *pj = (l - max).exp();
                        total += *pj;
                    }
                    p.iter_mut().for_each(|pj| *pj /= total);
                    let oi = &mut out[(b * seq + i) * d + off..][..dh];
                    for (j, pj) in p.iter().enumerate() {
                        let vj = &vv[(b * seq + j) * d + off..][..dh];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let shape = self.shape(q).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                seq,
                heads,
                probs,
            },
        ))
    }

    /// Attention weights recorded by an [`Graph::attention`] node, laid out as
    /// `[batch, heads, seq, seq]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Concatenation along the last axis. All parts must share their leading rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let (rows, _) = rows_of(self.shape(parts[0]));
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, w) = rows_of(self.shape(p));
            if r != rows {
                return shape_err("concat", format!("{r} rows vs {rows}"));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = self.shape(parts[0]).to_vec();
        *shape.last_mut().unwrap() = total;
        let parts = parts.iter().zip(widths).map(|(p, w)| (p.0, w)).collect();
        Ok(self.push(shape, out, Op::Concat { parts, rows }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(x).len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x.0)))
    }

    /// Selects rows (last-axis vectors) by index; output is `[idx.len(), width]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, width) = rows_of(self.shape(x));
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return shape_err("gather_rows", format!("indices {idx:?} out of {rows} rows"));
        }
        let xv = self.value(x);
        let out = idx.iter().flat_map(|&i| xv[i * width..(i + 1) * width].iter().copied()).collect();
        Ok(self.push(
            vec![idx.len(), width],
            out,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.iter().sum::<f64>() / xv.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(x.0))
    }

    /// Row-wise cosine similarity over the last axis, each norm floored at `eps`.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("cosine", a, b)?;
        let (rows, d) = rows_of(self.shape(a));
        let (av, bv) = (self.value(a), self.value(b));
        let mut na = vec![0.0; rows];
        let mut nb = vec![0.0; rows];
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let x = &av[r * d..(r + 1) * d];
            let y = &bv[r * d..(r + 1) * d];
            na[r] = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            nb[r] = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            out[r] = dot / (na[r].max(eps) * nb[r].max(eps));
        }
        Ok(self.push(
            vec![rows],
            out,
            Op::Cosine {
                a: a.0,
                b: b.0,
                eps,
                na,
                nb,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NotScalar(self.shape(loss).to_vec()));
        }
        if let Some(op) = self.poisoned {
            return Err(NnError::NonFinite { op });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, i, &dy, &mut grads);
        }
        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(p, n)| n.map(|n| (ParamId(p), n)))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn numel(&self, idx: usize) -> usize {
        self.value(Var(idx)).len()
    }

    fn backprop_node(&self, node: &Node, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.value(Var(i));
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let ws = &self.nodes[*w].shape;
                let (m, n) = (ws[0], ws[1]);
                let rows = dy.len() / m;
                let mut dx = vec![0.0; rows * n];
                gemm(Mat::new(dy, rows, m), Mat::new(self.value(Var(*w)), m, n), 0.0, &mut dx, n, 1);
                accumulate(grads, *x, dx);
                let xv = self.value(Var(*x));
                accumulate_with(grads, *w, m * n, |dw| {
                    gemm(Mat::new(dy, rows, m).t(), Mat::new(xv, rows, n), 1.0, dw, n, 1);
                });
                if let Some(b) = b {
                    accumulate_with(grads, *b, m, |db| {
                        for row in dy.chunks(m) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    });
                }
            }
            Op::Conv2d {
                x,
                k,
                b,
                cols,
                batch,
                cin,
                cout,
                hw: (h, w),
            } => {
                let (batch, cin, cout, h, w) = (*batch, *cin, *cout, *h, *w);
                let hw = h * w;
                let width = cin * 9;
                let kv = self.value(Var(*k));
                accumulate_with(grads, *k, cout * width, |dk| {
                    for bi in 0..batch {
                        gemm(
                            Mat::new(&dy[bi * cout * hw..(bi + 1) * cout * hw], cout, hw),
                            Mat::new(&cols[bi * hw * width..(bi + 1) * hw * width], hw, width),
                            1.0,
                            dk,
                            width,
                            1,
                        );
                    }
                });
                accumulate_with(grads, *b, cout, |db| {
                    for bi in 0..batch {
                        for (co, d) in db.iter_mut().enumerate() {
                            *d += dy[(bi * cout + co) * hw..(bi * cout + co + 1) * hw].iter().sum::<f64>();
                        }
                    }
                });
                let mut dcols = vec![0.0; hw * width];
                accumulate_with(grads, *x, batch * cin * hw, |dx| {
                    for bi in 0..batch {
                        gemm(
                            Mat::new(&dy[bi * cout * hw..(bi + 1) * cout * hw], cout, hw).t(),
                            Mat::new(kv, cout, width),
                            0.0,
                            &mut dcols,
                            width,
                            1,
                        );
                        col2im3(&dcols, cin, h, w, &mut dx[bi * cin * hw..(bi + 1) * cin * hw]);
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, dy.to_vec());
                accumulate(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, dy.to_vec());
                accumulate(grads, *b, dy.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(Var(*a)), self.value(Var(*b)));
                accumulate(grads, *a, dy.iter().zip(bv).map(|(g, y)| g * y).collect());
                accumulate(grads, *b, dy.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, row) => {
                accumulate(grads, *x, dy.to_vec());
                let n = self.numel(*row);
                accumulate_with(grads, *row, n, |dr| {
                    for chunk in dy.chunks(n) {
                        for (d, g) in dr.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                });
            }
            Op::MulRow(x, row) => {
                let rv = self.value(Var(*row));
                let xv = self.value(Var(*x));
                let n = rv.len();
                accumulate(
                    grads,
                    *x,
                    dy.chunks(n).flat_map(|c| c.iter().zip(rv).map(|(g, r)| g * r)).collect(),
                );
                accumulate_with(grads, *row, n, |dr| {
                    for (gc, xc) in dy.chunks(n).zip(xv.chunks(n)) {
                        for ((d, g), xval) in dr.iter_mut().zip(gc).zip(xc) {
                            *d += g * xval;
                        }
                    }
                });
            }
            Op::Scale(x, c) => accumulate(grads, *x, dy.iter().map(|g| g * c).collect()),
            Op::AddConst(x) | Op::Reshape(x) => accumulate(grads, *x, dy.to_vec()),
            Op::Relu(x) => {
                let xv = self.value(Var(*x));
                accumulate(
                    grads,
                    *x,
                    dy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(),
                );
            }
            Op::Softmax { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut dx = vec![0.0; dy.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let dot: f64 = (0..len).map(|j| dy[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = out[at(j)] * (dy[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let gv = self.value(Var(*gain));
                let d = gv.len();
                let rows = dy.len() / d;
                let mut dx = vec![0.0; dy.len()];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let g = &dy[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxhat[j] = g[j] * gv[j];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let scale = inv_std[r] / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = scale * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate_with(grads, *gain, d, |dg| {
                    for (gc, xc) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, g), xh) in dg.iter_mut().zip(gc).zip(xc) {
                            *a += g * xh;
                        }
                    }
                });
                accumulate_with(grads, *shift, d, |ds| {
                    for gc in dy.chunks(d) {
                        for (a, g) in ds.iter_mut().zip(gc) {
                            *a += g;
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                probs,
            } => {
                let (seq, heads) = (*seq, *heads);
                let (qv, kv, vv) = (self.value(Var(*q)), self.value(Var(*k)), self.value(Var(*v)));
                let d = self.nodes[*q].shape.last().copied().unwrap();
                let rows = qv.len() / d;
                let batch = rows / seq;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut dp = vec![0.0; seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..seq {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let doi = &dy[(b * seq + i) * d + off..][..dh];
                            for j in 0..seq {
                                let vj = &vv[(b * seq + j) * d + off..][..dh];
                                dp[j] = doi.iter().zip(vj).map(|(a, c)| a * c).sum();
                                let dvj = &mut dv[(b * seq + j) * d + off..][..dh];
                                for (t, g) in dvj.iter_mut().zip(doi) {
                                    *t += p[j] * g;
                                }
                            }
                            let dot: f64 = p.iter().zip(&dp).map(|(a, c)| a * c).sum();
                            for j in 0..seq {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[(b * seq + i) * d + off + c] += ds * kv[(b * seq + j) * d + off + c];
                                    dk[(b * seq + j) * d + off + c] += ds * qv[(b * seq + i) * d + off + c];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::Concat { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut offset = 0;
                for &(p, w) in parts {
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..*rows {
                        dp[r * w..(r + 1) * w].copy_from_slice(&dy[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, dp);
                    offset += w;
                }
            }
            Op::GatherRows { x, idx } => {
                let width = node.shape[1];
                let n = self.numel(*x);
                accumulate_with(grads, *x, n, |dx| {
                    for (k, &r) in idx.iter().enumerate() {
                        for j in 0..width {
                            dx[r * width + j] += dy[k * width + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let n = self.numel(*x);
                accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.numel(*x);
                accumulate(grads, *x, vec![dy[0] / n as f64; n]);
            }
            Op::Cosine { a, b, eps, na, nb } => {
                let (av, bv) = (self.value(Var(*a)), self.value(Var(*b)));
                let d = av.len() / na.len();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for r in 0..na.len() {
                    let (ma, mb) = (na[r].max(*eps), nb[r].max(*eps));
                    let c = out[r];
                    let g = dy[r];
                    for j in 0..d {
                        let (x, y) = (av[r * d + j], bv[r * d + j]);
                        let mut ga = y / (ma * mb);
                        if na[r] > *eps {
                            ga -= c * x / (ma * na[r]);
                        }
                        let mut gb = x / (ma * mb);
                        if nb[r] > *eps {
                            gb -= c * y / (mb * nb[r]);
                        }
                        da[r * d + j] = g * ga;
                        db[r * d + j] = g * gb;
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
        }
    }
}
