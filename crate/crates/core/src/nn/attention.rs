//! Scaled dot-product attention with Boolean masks.
//!
//! Masked positions are skipped entirely rather than set to `-inf`, so
//! their weights are exactly zero and their keys/values cannot influence
//! the output even in the last bit. A row with no visible position
//! produces a zero output.

use super::Scalar;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Self { rows, cols, allowed }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    /// Position `i` sees `j <= i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Position `i` sees `j >= i`.
    pub fn anti_causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j >= i)
    }

    pub fn diagonal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i == j)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    /// Elementwise AND with another mask of the same shape.
    pub fn and(&self, other: &AttentionMask) -> Result<AttentionMask> {
        ensure!(
            self.rows == other.rows && self.cols == other.cols,
            InvalidShape,
            "mask shapes {}x{} and {}x{} differ",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            allowed: self.allowed.iter().zip(&other.allowed).map(|(a, b)| *a && *b).collect(),
        })
    }
}

pub(crate) struct AttnShape {
    pub batch: usize,
    pub lq: usize,
    pub lk: usize,
    pub dim: usize,
    pub heads: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

fn mask_for<'m>(masks: &'m [std::sync::Arc<AttentionMask>], b: usize) -> &'m AttentionMask {
    if masks.len() == 1 {
        &masks[0]
    } else {
        &masks[b]
    }
}

/// Returns `(output [B·Lq, D], probabilities [B, H, Lq, Lk])`.
pub(crate) fn attention_forward<T: Scalar>(
    s: &AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    masks: &[std::sync::Arc<AttentionMask>],
) -> (Vec<T>, Vec<T>) {
    let dh = s.head_dim();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut out = vec![T::zero(); s.batch * s.lq * s.dim];
    let mut probs = vec![T::zero(); s.batch * s.heads * s.lq * s.lk];
    let mut scores = vec![T::zero(); s.lk];
    for b in 0..s.batch {
        let mask = mask_for(masks, b);
        for h in 0..s.heads {
            let off = h * dh;
            for i in 0..s.lq {
                let qi = &q[(b * s.lq + i) * s.dim + off..][..dh];
                let mut max = T::neg_infinity();
                for j in 0..s.lk {
                    if !mask.allows(i, j) {
                        continue;
                    }
                    let kj = &k[(b * s.lk + j) * s.dim + off..][..dh];
                    let dot: T = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum();
                    scores[j] = dot * scale;
                    max = max.max(scores[j]);
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let prow = &mut probs[((b * s.heads + h) * s.lq + i) * s.lk..][..s.lk];
                let mut total = T::zero();
                for j in 0..s.lk {
                    if mask.allows(i, j) {
                        prow[j] = (scores[j] - max).exp();
                        total = total + prow[j];
                    }
                }
                let orow = &mut out[(b * s.lq + i) * s.dim + off..][..dh];
                for j in 0..s.lk {
                    if !mask.allows(i, j) {
                        continue;
                    }
                    prow[j] = prow[j] / total;
                    let vj = &v[(b * s.lk + j) * s.dim + off..][..dh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o = *o + prow[j] * x;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    s: &AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    masks: &[std::sync::Arc<AttentionMask>],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = s.head_dim();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); s.lk];
    for b in 0..s.batch {
        let mask = mask_for(masks, b);
        for h in 0..s.heads {
            let off = h * dh;
            for i in 0..s.lq {
                let prow = &probs[((b * s.heads + h) * s.lq + i) * s.lk..][..s.lk];
                let go = &dout[(b * s.lq + i) * s.dim + off..][..dh];
                let mut weighted = T::zero();
                for j in 0..s.lk {
                    if !mask.allows(i, j) {
                        continue;
                    }
                    let vj = &v[(b * s.lk + j) * s.dim + off..][..dh];
                    dp[j] = go.iter().zip(vj).map(|(&a, &c)| a * c).sum();
                    weighted = weighted + dp[j] * prow[j];
                    let dvj = &mut dv[(b * s.lk + j) * s.dim + off..][..dh];
                    for (d, &g) in dvj.iter_mut().zip(go) {
                        *d = *d + prow[j] * g;
                    }
                }
                let qi = &q[(b * s.lq + i) * s.dim + off..][..dh];
                for j in 0..s.lk {
                    if !mask.allows(i, j) {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    let kj = &k[(b * s.lk + j) * s.dim + off..][..dh];
                    let dqi = &mut dq[(b * s.lq + i) * s.dim + off..][..dh];
                    for (d, &x) in dqi.iter_mut().zip(kj) {
                        *d = *d + ds * x;
                    }
                    let dkj = &mut dk[(b * s.lk + j) * s.dim + off..][..dh];
                    for (d, &x) in dkj.iter_mut().zip(qi) {
                        *d = *d + ds * x;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
