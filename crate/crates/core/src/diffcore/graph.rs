//! Reverse-mode tape over the handful of dense ops the two transformers use.
//!
//! A [`Graph`] records every op eagerly: values are computed at push time and
//! the op (plus whatever it saved for its backward pass) is appended to the
//! tape. [`Graph::backward`] walks the tape once in reverse.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::gemm::{gemm, MatMut, MatRef};
use super::{AttentionMask, ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type RowGroups = Rc<Vec<(usize, usize, Vec<usize>)>>;

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow {
        x: Var,
        row: Var,
    },
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Modulate {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: Rc<[usize]>,
    },
    Silu(Var),
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: RowGroups,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SquaredError {
        pred: Var,
        target: Vec<f64>,
        scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar w.r.t. every node that influenced it.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient for every parameter in `store`; parameters the loss never
    /// touched get zeros.
    pub fn for_params(&self, store: &ParameterStore) -> ParameterStore {
        store
            .iter()
            .map(|(name, t)| {
                let g = self
                    .params
                    .get(name)
                    .and_then(|v| self.grads[v.0].clone())
                    .map(|g| Tensor::new(self.shapes[self.params[name].0].clone(), g))
                    .transpose()
                    .expect("gradient shape")
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    first_non_finite: Option<&'static str>,
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Linear { .. } => "linear",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddRow { .. } => "add_row",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Modulate { .. } => "modulate",
        Op::Silu(_) => "silu",
        Op::Gelu(_) => "gelu",
        Op::Attention { .. } => "attention",
        Op::ConcatRows(_) => "concat_rows",
        Op::SliceRows { .. } => "slice_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::SquaredError { .. } => "squared_error",
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(op_name(&op));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
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

    /// Errors if any recorded value so far contained NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a named parameter. Repeated lookups share one node so
    /// gradients accumulate.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.require(name)?.clone();
        let v = self.push(t, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x @ w + b` with `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
        if wv.shape().len() != 2 || wv.rows() != k {
            return Err(Error::Shape(format!(
                "linear: input {:?} vs weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        gemm(
            1.0,
            MatRef::new(xv.data(), n, k),
            MatRef::new(wv.data(), k, m),
            0.0,
            MatMut::new(&mut out, n, m),
        );
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(Error::Shape(format!("linear bias {:?} vs {m}", bv.shape())));
            }
            for row in out.chunks_mut(m) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Convenience: linear layer whose weight/bias live under `prefix`.
    pub fn dense(&mut self, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(store, &format!("{prefix}.weight"))?;
        let b = self.param(store, &format!("{prefix}.bias"))?;
        self.linear(x, w, Some(b))
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "elementwise {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, s))
    }

    /// Adds a row vector `[m]` to every row of `x: [n, m]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let m = xv.cols();
        if rv.len() != m {
            return Err(Error::Shape(format!("add_row {:?} vs {:?}", xv.shape(), rv.shape())));
        }
        let mut data = xv.data().to_vec();
        for r in data.chunks_mut(m) {
            for (a, b) in r.iter_mut().zip(rv.data()) {
                *a += b;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow { x, row }))
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = xv.data().to_vec();
        let mut rstd = Vec::with_capacity(xv.rows());
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push(t, Op::LayerNorm { x, rstd })
    }

    /// `x * (1 + gamma[g]) + beta[g]` where row `r` of `x` uses parameter row
    /// `g = groups[r]`.
    pub fn modulate(&mut self, x: Var, gamma: Var, beta: Var, groups: Rc<[usize]>) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if gv.cols() != d || !gv.same_shape(bv) || groups.len() != xv.rows() {
            return Err(Error::Shape(format!(
                "modulate x {:?} gamma {:?} beta {:?} groups {}",
                xv.shape(),
                gv.shape(),
                bv.shape(),
                groups.len()
            )));
        }
        if groups.iter().any(|&g| g >= gv.rows()) {
            return Err(Error::Shape("modulate group index out of range".into()));
        }
        let mut out = xv.data().to_vec();
        for (r, row) in out.chunks_mut(d).enumerate() {
            let (g, b) = (gv.row(groups[r]), bv.row(groups[r]));
            for c in 0..d {
                row[c] = row[c] * (1.0 + g[c]) + b[c];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::Modulate {
                x,
                gamma,
                beta,
                groups,
            },
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * sigmoid(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Silu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu_parts(v).0).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [n, H*dk]`, `k: [m, H*dk]`, `v: [m, H*dv]`, `mask: [n, m]`. Masked
    /// logits are never evaluated; each row's softmax runs over its unmasked
    /// columns only.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &AttentionMask,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, m) = (qv.rows(), kv.rows());
        if heads == 0 || qv.cols() % heads != 0 || vv.cols() % heads != 0 {
            return Err(Error::Shape(format!("attention: {heads} heads")));
        }
        if kv.cols() != qv.cols() || vv.rows() != m || mask.rows() != n || mask.cols() != m {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?} mask {}x{}",
                qv.shape(),
                kv.shape(),
                vv.shape(),
                mask.rows(),
                mask.cols()
            )));
        }
        mask.validate()?;
        let groups: RowGroups = Rc::new(mask.row_groups());
        let (dq, dv) = (qv.cols(), vv.cols());
        let (hk, hv) = (dq / heads, dv / heads);
        let scale = 1.0 / (hk as f64).sqrt();
        let mut out = vec![0.0; n * dv];
        let mut probs = Vec::new();
        let mut kc = Vec::new();
        let mut vc = Vec::new();
        for h in 0..heads {
            for (r0, r1, cols) in groups.iter() {
                let (g, c) = (r1 - r0, cols.len());
                gather_head(kv.data(), dq, h * hk, hk, cols, &mut kc);
                gather_head(vv.data(), dv, h * hv, hv, cols, &mut vc);
                let base = probs.len();
                probs.resize(base + g * c, 0.0);
                let p = &mut probs[base..];
                gemm(
                    scale,
                    MatRef::strided(&qv.data()[r0 * dq + h * hk..], g, hk, dq, 1),
                    MatRef::new(&kc, c, hk).t(),
                    0.0,
                    MatMut::new(p, g, c),
                );
                for row in p.chunks_mut(c) {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - mx).exp();
                        s += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= s;
                    }
                }
                gemm(
                    1.0,
                    MatRef::new(p, g, c),
                    MatRef::new(&vc, c, hv),
                    0.0,
                    MatMut::strided(&mut out[r0 * dv + h * hv..], g, hv, dv, 1),
                );
            }
        }
        let t = Tensor::matrix(n, dv, out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::Shape(format!("concat_rows {} vs {}", pv.cols(), cols)));
            }
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::Shape(format!("slice {start}..{end} of {} rows", xv.rows())));
        }
        let c = xv.cols();
        let t = Tensor::matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    /// Row lookup (embedding tables).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= xv.rows() {
                return Err(Error::Shape(format!("gather row {i} of {}", xv.rows())));
            }
            data.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(index.len(), c, data)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Scalar `scale * sum((pred - target)^2)`.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor, scale: f64) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Error::Shape(format!(
                "squared_error {:?} vs {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let s: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::scalar(scale * s),
            Op::SquaredError {
                pred,
                target: target.data().to_vec(),
                scale,
            },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward from a non-scalar".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
                let gx = acc(grads, *x, n * k);
                gemm(
                    1.0,
                    MatRef::new(gy, n, m),
                    MatRef::new(wv.data(), k, m).t(),
                    1.0,
                    MatMut::new(gx, n, k),
                );
                let gw = acc(grads, *w, k * m);
                gemm(
                    1.0,
                    MatRef::new(xv.data(), n, k).t(),
                    MatRef::new(gy, n, m),
                    1.0,
                    MatMut::new(gw, k, m),
                );
                if let Some(b) = b {
                    let gb = acc(grads, *b, m);
                    for row in gy.chunks(m) {
                        for (a, g) in gb.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, gy.len()), gy, 1.0);
                add_into(acc(grads, *b, gy.len()), gy, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, gy.len()), gy, 1.0);
                add_into(acc(grads, *b, gy.len()), gy, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let ga = acc(grads, *a, gy.len());
                for ((g, y), o) in ga.iter_mut().zip(gy).zip(bv) {
                    *g += y * o;
                }
                let gb = acc(grads, *b, gy.len());
                for ((g, y), o) in gb.iter_mut().zip(gy).zip(av) {
                    *g += y * o;
                }
            }
            Op::Scale(x, s) => add_into(acc(grads, *x, gy.len()), gy, *s),
            Op::AddRow { x, row } => {
                add_into(acc(grads, *x, gy.len()), gy, 1.0);
                let m = val(*row).len();
                let gr = acc(grads, *row, m);
                for r in gy.chunks(m) {
                    add_into(gr, r, 1.0);
                }
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let d = node.value.cols();
                let gx = acc(grads, *x, gy.len());
                for (r, ((gr, yr), gxr)) in gy
                    .chunks(d)
                    .zip(y.chunks(d))
                    .zip(gx.chunks_mut(d))
                    .enumerate()
                {
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        gxr[c] += rstd[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
            }
            Op::Modulate {
                x,
                gamma,
                beta,
                groups,
            } => {
                let (xv, gv) = (val(*x), val(*gamma));
                let d = xv.cols();
                let gx = acc(grads, *x, gy.len());
                for (r, (gr, gxr)) in gy.chunks(d).zip(gx.chunks_mut(d)).enumerate() {
                    let g = gv.row(groups[r]);
                    for c in 0..d {
                        gxr[c] += gr[c] * (1.0 + g[c]);
                    }
                }
                let ggam = acc(grads, *gamma, gv.len());
                for (r, gr) in gy.chunks(d).enumerate() {
                    let xr = xv.row(r);
                    let o = groups[r] * d;
                    for c in 0..d {
                        ggam[o + c] += gr[c] * xr[c];
                    }
                }
                let gbet = acc(grads, *beta, gv.len());
                for (r, gr) in gy.chunks(d).enumerate() {
                    let o = groups[r] * d;
                    for c in 0..d {
                        gbet[o + c] += gr[c];
                    }
                }
            }
            Op::Silu(x) => {
                let xv = val(*x).data();
                let gx = acc(grads, *x, gy.len());
                for ((g, y), &v) in gx.iter_mut().zip(gy).zip(xv) {
                    let s = sigmoid(v);
                    *g += y * s * (1.0 + v * (1.0 - s));
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                let gx = acc(grads, *x, gy.len());
                for ((g, y), &v) in gx.iter_mut().zip(gy).zip(xv) {
                    *g += y * gelu_parts(v).1;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            } => self.attention_backward(gy, (*q, *k, *v), *heads, groups, probs, grads),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    add_into(acc(grads, *p, len), &gy[off..off + len], 1.0);
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let c = xv.cols();
                let gx = acc(grads, *x, xv.len());
                add_into(&mut gx[start * c..start * c + gy.len()], gy, 1.0);
            }
            Op::GatherRows { x, index } => {
                let xv = val(*x);
                let c = xv.cols();
                let gx = acc(grads, *x, xv.len());
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut gx[i * c..(i + 1) * c], &gy[r * c..(r + 1) * c], 1.0);
                }
            }
            Op::SquaredError {
                pred,
                target,
                scale,
            } => {
                let pv = val(*pred).data();
                let gp = acc(grads, *pred, pv.len());
                let s = 2.0 * scale * gy[0];
                for ((g, p), t) in gp.iter_mut().zip(pv).zip(target) {
                    *g += s * (p - t);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        gy: &[f64],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        groups: &RowGroups,
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let (n, m) = (qv.rows(), kv.rows());
        let (dq, dv) = (qv.cols(), vv.cols());
        let (hk, hv) = (dq / heads, dv / heads);
        let scale = 1.0 / (hk as f64).sqrt();
        let mut gq = vec![0.0; n * dq];
        let mut gk = vec![0.0; m * dq];
        let mut gvv = vec![0.0; m * dv];
        let (mut kc, mut vc) = (Vec::new(), Vec::new());
        let mut off = 0;
        for h in 0..heads {
            for (r0, r1, cols) in groups.iter() {
                let (g, c) = (r1 - r0, cols.len());
                let p = &probs[off..off + g * c];
                off += g * c;
                gather_head(kv.data(), dq, h * hk, hk, cols, &mut kc);
                gather_head(vv.data(), dv, h * hv, hv, cols, &mut vc);
                let go = MatRef::strided(&gy[r0 * dv + h * hv..], g, hv, dv, 1);
                // dP = dO V^T
                let mut ds = vec![0.0; g * c];
                gemm(1.0, go, MatRef::new(&vc, c, hv).t(), 0.0, MatMut::new(&mut ds, g, c));
                // dV = P^T dO
                let mut gvc = vec![0.0; c * hv];
                gemm(1.0, MatRef::new(p, g, c).t(), go, 0.0, MatMut::new(&mut gvc, c, hv));
                for (ci, &col) in cols.iter().enumerate() {
                    add_into(
                        &mut gvv[col * dv + h * hv..col * dv + (h + 1) * hv],
                        &gvc[ci * hv..(ci + 1) * hv],
                        1.0,
                    );
                }
                // softmax Jacobian
                for (dsr, pr) in ds.chunks_mut(c).zip(p.chunks(c)) {
                    let dot: f64 = dsr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (d, pp) in dsr.iter_mut().zip(pr) {
                        *d = pp * (*d - dot);
                    }
                }
                gemm(
                    scale,
                    MatRef::new(&ds, g, c),
                    MatRef::new(&kc, c, hk),
                    1.0,
                    MatMut::strided(&mut gq[r0 * dq + h * hk..], g, hk, dq, 1),
                );
                let mut gkc = vec![0.0; c * hk];
                gemm(
                    scale,
                    MatRef::new(&ds, g, c).t(),
                    MatRef::strided(&qv.data()[r0 * dq + h * hk..], g, hk, dq, 1),
                    0.0,
                    MatMut::new(&mut gkc, c, hk),
                );
                for (ci, &col) in cols.iter().enumerate() {
                    add_into(
                        &mut gk[col * dq + h * hk..col * dq + (h + 1) * hk],
                        &gkc[ci * hk..(ci + 1) * hk],
                        1.0,
                    );
                }
            }
        }
        add_into(acc(grads, q, n * dq), &gq, 1.0);
        add_into(acc(grads, k, m * dq), &gk, 1.0);
        add_into(acc(grads, v, m * dv), &gvv, 1.0);
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

/// Copies the `width` columns starting at `col0` of the listed rows.
fn gather_head(
    data: &[f64],
    stride: usize,
    col0: usize,
    width: usize,
    rows: &[usize],
    out: &mut Vec<f64>,
) {
    out.clear();
    for &r in rows {
        out.extend_from_slice(&data[r * stride + col0..r * stride + col0 + width]);
    }
}
