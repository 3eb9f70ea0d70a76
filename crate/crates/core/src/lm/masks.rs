use std::sync::Arc;

use super::HierarchyConfig;
use crate::error::{ensure, Result};
use crate::nn::AttentionMask;

/// Cells of one codemap level scheduled for resampling (`true`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InpaintMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl InpaintMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                cells.push(f(r, c));
            }
        }
        Self { rows, cols, cells }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Mask in top sequence order (START unmasked).
    pub fn linearize_top(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.cells.len() + 1);
        out.push(false);
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.get(r, c));
            }
        }
        out
    }

    /// Mask in bottom sequence order (STARTs unmasked).
    pub fn linearize_bottom(&self, hier: &HierarchyConfig) -> Result<Vec<bool>> {
        ensure!(
            self.shape() == hier.bottom_shape(),
            InvalidInput,
            "bottom mask {:?} does not match hierarchy {:?}",
            self.shape(),
            hier.bottom_shape()
        );
        let p = hier.patch_area();
        let mut out = vec![false; p];
        for i in p..hier.bottom_len() {
            let (r, c) = hier.bottom_cell(i);
            out.push(self.get(r, c));
        }
        Ok(out)
    }
}

/// Attention masks for one forward pass.
#[derive(Clone, Debug)]
pub struct LevelMasks {
    pub encoder: Arc<AttentionMask>,
    pub decoder: Arc<AttentionMask>,
    pub cross: Arc<AttentionMask>,
}

/// Top model masks for a linearized inpainting mask `m`.
///
/// The encoder is anti-causal with the future positions scheduled for
/// inpainting hidden; a position always sees itself. The decoder is causal
/// and cross-attention is unrestricted.
pub fn top_masks(m: &[bool], n: usize) -> Result<LevelMasks> {
    ensure!(m.len() == n, InvalidInput, "mask of length {} for a sequence of {n}", m.len());
    Ok(LevelMasks {
        encoder: Arc::new(AttentionMask::from_fn(n, n, |i, j| j >= i && (!m[j] || j == i))),
        decoder: Arc::new(AttentionMask::causal(n)),
        cross: Arc::new(AttentionMask::full(n, n)),
    })
}

/// Bottom model masks: anti-causal encoder over the top sequence, causal
/// decoder, and cross-attention restricted to the parent top position.
///
/// With `isolate`, both self-attentions are reduced to the diagonal so
/// the top-to-bottom path can be probed on its own.
pub fn bottom_masks(hier: &HierarchyConfig, isolate: bool) -> LevelMasks {
    let (nt, nb, p) = (hier.top_len(), hier.bottom_len(), hier.patch_area());
    let (encoder, decoder) = if isolate {
        (AttentionMask::diagonal(nt), AttentionMask::diagonal(nb))
    } else {
        (AttentionMask::anti_causal(nt), AttentionMask::causal(nb))
    };
    LevelMasks {
        encoder: Arc::new(encoder),
        decoder: Arc::new(decoder),
        cross: Arc::new(AttentionMask::from_fn(nb, nt, |i, k| k == i / p)),
    }
}
