use std::sync::Arc;

use super::attention::{attention_backward, attention_forward, AttentionMask, AttnShape};
use super::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, ConvGeom, Plan,
};
use super::loss::{cross_entropy_backward, cross_entropy_forward};
use super::params::{ParamId, ParamStore};
use super::scalar::matmul_into;
use super::tensor::numel;
use super::{Scalar, Tensor};
use crate::error::{ensure, Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SumAll(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        idx: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        masks: Vec<Arc<AttentionMask>>,
        heads: usize,
        batch: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        mass: T,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::SumAll(_) => "sum",
            Op::MatMul { .. } => "matmul",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv_transpose2d",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of one forward pass.
pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().flatten()
    }

    pub(crate) fn param_slots(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }

    /// L2 norm over every parameter gradient.
    pub fn global_norm(&self) -> T {
        self.params.iter().flatten().map(|g| g.sum_sq()).sum::<T>().sqrt()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::InvalidShape(format!("{op}: {detail}"))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn permute_index_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    // out[i] = in[map[i]]
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attention weights `[B, H, Lq, Lk]` of an attention output.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("non-finite output of {}", op.name())));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v`'s value with no gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf. Repeated calls with the same id return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.store.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    /// `x + b` with `b` broadcast along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(shape_err("add_bias", format!("bias {bs:?} for input {xs:?}")));
        }
        let d = bs[0];
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e = *e + bias[i % d];
        }
        self.push(v, Op::AddBias(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::lit(s);
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e = *e * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let mut v = self.value(x).clone();
        v.data_mut().iter_mut().for_each(|e| *e = e.max(T::zero()));
        self.push(v, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        ensure!(n > 0, InvalidShape, "mean of an empty tensor");
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// 2-D product `op(a) · op(b)`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", format!("needs 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dims {k} and {k2} differ")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul { a, b, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `x · w + b` over the last axis; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(shape_err("linear", format!("input {xs:?} with weight {ws:?}")));
        }
        let rows = numel(&xs[..xs.len() - 1]);
        let flat = self.reshape(x, &[rows, ws[0]])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_bias(y, b)?;
        }
        let mut out_shape = xs;
        *out_shape.last_mut().expect("nonempty") = ws[1];
        self.reshape(y, &out_shape)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push(v, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(shape_err("permute", format!("{perm:?} is not a permutation of rank {}", shape.len())));
        }
        let map = permute_index_map(&shape, perm);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.push(
            Tensor::from_vec(&out_shape, data)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        ensure!(!xs.is_empty(), InvalidShape, "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        ensure!(axis < first.len(), InvalidShape, "concat axis {axis} out of range for {first:?}");
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{s:?} incompatible with {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let s = self.shape(x);
                let chunk = s[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::from_vec(&shape, data)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure!(axis < shape.len(), InvalidShape, "slice axis {axis} out of range for {shape:?}");
        ensure!(
            start + len <= shape[axis],
            InvalidShape,
            "slice {start}..{} exceeds axis length {}",
            start + len,
            shape[axis]
        );
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        self.push(Tensor::from_vec(&out, data)?, Op::Slice { x, axis, start })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        ensure!(axis < shape.len(), InvalidShape, "softmax axis {axis} out of range for {shape:?}");
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    out[at(j)] = (src[at(j)] - max).exp();
                    total = total + out[at(j)];
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        self.push(Tensor::from_vec(&shape, out)?, Op::Softmax { x, axis })
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| shape_err("layer_norm", "scalar input".into()))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(shape_err("layer_norm", format!("affine {:?} for feature dim {d}", self.shape(p))));
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d.max(1);
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        let inv_d = T::one() / T::lit(d as f64);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            Tensor::from_vec(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Rows of `table` (`[V, D]`) selected by `idx`; returns `[idx.len(), D]`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        ensure!(ts.len() == 2, InvalidShape, "embedding table must be 2-D, got {ts:?}");
        let (vocab, d) = (ts[0], ts[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidInput(format!("embedding index {bad} out of range for vocabulary {vocab}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            Tensor::from_vec(&[idx.len(), d], data)?,
            Op::Embedding {
                table,
                idx: idx.to_vec(),
            },
        )
    }

    fn conv_dims(&self, x: Var, w: Var, b: Option<Var>, transpose: bool) -> Result<[usize; 7]> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let op = if transpose { "conv_transpose2d" } else { "conv2d" };
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err(op, format!("input {xs:?} and weight {ws:?} must be 4-D")));
        }
        // [n, cin, h, w, cout, kh, kw]
        let (cin_w, cout) = if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[1] != cin_w {
            return Err(shape_err(op, format!("input channels {} vs weight {ws:?}", xs[1])));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err(op, format!("bias {:?} for {cout} output channels", self.shape(b))));
            }
        }
        Ok([xs[0], xs[1], xs[2], xs[3], cout, ws[2], ws[3]])
    }

    /// `x` `[N, C, H, W]`, `w` `[O, C, kh, kw]`, optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let [n, c, h, wd, o, kh, kw] = self.conv_dims(x, w, b, false)?;
        let (oh, ow) = geom.conv_out((h, wd), (kh, kw))?;
        let plan = Plan {
            c,
            h,
            w: wd,
            kh,
            kw,
            oh,
            ow,
            geom,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = conv2d_forward(&plan, n, o, self.value(x).data(), self.value(w).data(), bias);
        self.push(Tensor::from_vec(&[n, o, oh, ow], out)?, Op::Conv2d { x, w, b, geom })
    }

    /// `x` `[N, Cin, H, W]`, `w` `[Cin, Cout, kh, kw]`, optional bias `[Cout]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let [n, cin, h, wd, cout, kh, kw] = self.conv_dims(x, w, b, true)?;
        let (oh, ow) = geom.transpose_out((h, wd), (kh, kw))?;
        let plan = Plan {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: h,
            ow: wd,
            geom,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = conv_transpose2d_forward(&plan, n, cin, self.value(x).data(), self.value(w).data(), bias);
        self.push(Tensor::from_vec(&[n, cout, oh, ow], out)?, Op::ConvT2d { x, w, b, geom })
    }

    /// Multi-head scaled dot-product attention over a batch.
    ///
    /// `q` is `[B·Lq, D]`, `k` and `v` are `[B·Lk, D]`. `masks` holds one
    /// `Lq × Lk` mask shared by the batch or one per batch element.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        masks: &[Arc<AttentionMask>],
        heads: usize,
        batch: usize,
    ) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        ensure!(
            qs.len() == 2 && ks.len() == 2 && ks == vs && qs[1] == ks[1],
            InvalidShape,
            "attention operands {qs:?}, {ks:?}, {vs:?}"
        );
        let dim = qs[1];
        ensure!(heads > 0 && dim % heads == 0, InvalidConfig, "model dim {dim} not divisible by {heads} heads");
        ensure!(
            batch > 0 && qs[0] % batch == 0 && ks[0] % batch == 0,
            InvalidShape,
            "rows {} / {} not divisible by batch {batch}",
            qs[0],
            ks[0]
        );
        let (lq, lk) = (qs[0] / batch, ks[0] / batch);
        ensure!(
            masks.len() == 1 || masks.len() == batch,
            InvalidShape,
            "{} masks for batch {batch}",
            masks.len()
        );
        for m in masks {
            ensure!(
                m.rows() == lq && m.cols() == lk,
                InvalidShape,
                "mask {}x{} for attention {lq}x{lk}",
                m.rows(),
                m.cols()
            );
        }
        let shape = AttnShape {
            batch,
            lq,
            lk,
            dim,
            heads,
        };
        let (out, probs) = attention_forward(
            &shape,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            masks,
        );
        self.push(
            Tensor::from_vec(&[qs[0], dim], out)?,
            Op::Attention {
                q,
                k,
                v,
                masks: masks.to_vec(),
                heads,
                batch,
                probs,
            },
        )
    }

    /// Mean label-smoothed cross-entropy of `logits` `[N, K]` over the rows
    /// whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        ensure!(
            ls.len() == 2 && ls[0] == targets.len(),
            InvalidShape,
            "logits {ls:?} for {} targets",
            targets.len()
        );
        ensure!(
            (0.0..1.0).contains(&smoothing),
            InvalidInput,
            "smoothing mass {smoothing} outside [0, 1)"
        );
        let k = ls[1];
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= k) {
            return Err(Error::InvalidInput(format!("target {bad} out of range for {k} classes")));
        }
        let mass = T::lit(smoothing);
        let (loss, probs) = cross_entropy_forward(self.value(logits).data(), k, targets, mass);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mass,
                probs,
            },
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        ensure!(
            self.value(loss).numel() == 1,
            InvalidShape,
            "backward needs a scalar loss, got {:?}",
            self.shape(loss)
        );
        let mut g: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut params: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            self.backward_node(i, &gout, &mut g, &mut params)?;
            g[i] = Some(gout);
        }
        Ok(Gradients { nodes: g, params })
    }

    fn backward_node(
        &self,
        i: usize,
        gout: &Tensor<T>,
        g: &mut [Option<Tensor<T>>],
        params: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let go = gout.data();
        let mut acc = |v: Var, data: Vec<T>| {
            let t = Tensor::from_vec(self.shape(v), data).expect("gradient shape");
            match &mut g[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match &mut params[id.index()] {
                Some(existing) => existing.add_assign(gout),
                slot @ None => *slot = Some(gout.clone()),
            },
            Op::Add(a, b) => {
                acc(*a, go.to_vec());
                acc(*b, go.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, go.to_vec());
                acc(*b, go.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, go.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                acc(*b, go.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::AddBias(x, b) => {
                let d = self.shape(*b)[0];
                let mut db = vec![T::zero(); d];
                for (j, &v) in go.iter().enumerate() {
                    db[j % d] = db[j % d] + v;
                }
                acc(*x, go.to_vec());
                acc(*b, db);
            }
            Op::Scale(x, s) => acc(*x, go.iter().map(|&v| v * *s).collect()),
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                acc(
                    *x,
                    go.iter()
                        .zip(vx)
                        .map(|(&v, &xi)| if xi > T::zero() { v } else { T::zero() })
                        .collect(),
                );
            }
            Op::SumAll(x) => acc(*x, vec![go[0]; self.value(*x).numel()]),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (sa, sb) = (va.shape(), vb.shape());
                let (m, k) = if *ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
                let n = if *tb { sb[0] } else { sb[1] };
                // C = op(A) op(B); dA = dC op(B)^T (stored as A's layout).
                let mut da = vec![T::zero(); m * k];
                if *ta {
                    // A stored [k, m]: dA = op(B) dC^T
                    matmul_into(k, n, m, vb.data(), *tb, go, true, &mut da, false);
                } else {
                    matmul_into(m, n, k, go, false, vb.data(), !*tb, &mut da, false);
                }
                let mut db = vec![T::zero(); k * n];
                if *tb {
                    // B stored [n, k]: dB = dC^T op(A)
                    matmul_into(n, m, k, go, true, va.data(), *ta, &mut db, false);
                } else {
                    matmul_into(k, m, n, va.data(), !*ta, go, false, &mut db, false);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Reshape(x) => acc(*x, go.to_vec()),
            Op::Permute { x, perm } => {
                let map = permute_index_map(self.shape(*x), perm);
                let mut dx = vec![T::zero(); go.len()];
                for (o, &src) in map.iter().enumerate() {
                    dx[src] = go[o];
                }
                acc(*x, dx);
            }
            Op::Concat { xs, axis } => {
                let out_shape = gout.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dx.extend_from_slice(&go[base..base + len * inner]);
                    }
                    offset += len;
                    acc(x, dx);
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x);
                let (outer, n, inner) = split_axis(in_shape, *axis);
                let len = gout.shape()[*axis];
                let mut dx = vec![T::zero(); numel(in_shape)];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&go[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + ii;
                        let dot: T = (0..n).map(|j| go[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (go[at(j)] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gain)[0];
                let gv = self.value(*gain).data();
                let rows = rstd.len();
                let mut dx = vec![T::zero(); go.len()];
                let mut dg = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let inv_d = T::one() / T::lit(d as f64);
                for r in 0..rows {
                    let base = r * d;
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dy = go[base + j];
                        let h = xhat[base + j];
                        dg[j] = dg[j] + dy * h;
                        dbias[j] = dbias[j] + dy;
                        let dh = dy * gv[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * h;
                    }
                    mean_dh = mean_dh * inv_d;
                    mean_dh_h = mean_dh_h * inv_d;
                    for j in 0..d {
                        let dh = go[base + j] * gv[j];
                        dx[base + j] = rstd[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, dbias);
            }
            Op::Embedding { table, idx } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] = dt[i * d + j] + go[r * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::Conv2d { x, w, b, geom } => {
                let [n, c, h, wd, o, kh, kw] = self.conv_dims(*x, *w, *b, false)?;
                let (oh, ow) = geom.conv_out((h, wd), (kh, kw))?;
                let plan = Plan {
                    c,
                    h,
                    w: wd,
                    kh,
                    kw,
                    oh,
                    ow,
                    geom: *geom,
                };
                let (dx, dw, db) = conv2d_backward(&plan, n, o, self.value(*x).data(), self.value(*w).data(), go);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::ConvT2d { x, w, b, geom } => {
                let [n, cin, h, wd, cout, kh, kw] = self.conv_dims(*x, *w, *b, true)?;
                let (oh, ow) = geom.transpose_out((h, wd), (kh, kw))?;
                let plan = Plan {
                    c: cout,
                    h: oh,
                    w: ow,
                    kh,
                    kw,
                    oh: h,
                    ow: wd,
                    geom: *geom,
                };
                let (dx, dw, db) =
                    conv_transpose2d_backward(&plan, n, cin, self.value(*x).data(), self.value(*w).data(), go);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                masks,
                heads,
                batch,
                probs,
            } => {
                let (qs, ks) = (self.shape(*q), self.shape(*k));
                let shape = AttnShape {
                    batch: *batch,
                    lq: qs[0] / batch,
                    lk: ks[0] / batch,
                    dim: qs[1],
                    heads: *heads,
                };
                let (dq, dk, dv) = attention_backward(
                    &shape,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    masks,
                    go,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mass,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                acc(*logits, cross_entropy_backward(probs, k, targets, *mass, go[0]));
            }
        }
        Ok(())
    }
}
