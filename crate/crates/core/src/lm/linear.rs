use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::vqvae::CodeGrid;

/// Shapes of the two codemap levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// `(F_top, T_top)`.
    pub top_shape: (usize, usize),
    /// `(D_F, D_T)`: bottom cells per top cell along each axis.
    pub patch: (usize, usize),
}

impl HierarchyConfig {
    pub fn new(top_shape: (usize, usize), patch: (usize, usize)) -> Result<Self> {
        let h = Self { top_shape, patch };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.top_shape.0 > 0 && self.top_shape.1 > 0 && self.patch.0 > 0 && self.patch.1 > 0,
            InvalidConfig,
            "hierarchy {:?} / {:?} has an empty dimension",
            self.top_shape,
            self.patch
        );
        Ok(())
    }

    pub fn bottom_shape(&self) -> (usize, usize) {
        (self.top_shape.0 * self.patch.0, self.top_shape.1 * self.patch.1)
    }

    /// Patch area `P`.
    pub fn patch_area(&self) -> usize {
        self.patch.0 * self.patch.1
    }

    pub fn top_area(&self) -> usize {
        self.top_shape.0 * self.top_shape.1
    }

    /// Length of a linearized top sequence: one START plus every cell.
    pub fn top_len(&self) -> usize {
        self.top_area() + 1
    }

    /// Length of a linearized bottom sequence: `P` STARTs plus every cell.
    pub fn bottom_len(&self) -> usize {
        self.patch_area() * self.top_len()
    }

    /// Top cell `(f, t)` at top sequence position `k >= 1`.
    pub fn top_cell(&self, k: usize) -> (usize, usize) {
        let j = k - 1;
        (j % self.top_shape.0, j / self.top_shape.0)
    }

    /// Bottom cell at bottom sequence position `i >= P`.
    pub fn bottom_cell(&self, i: usize) -> (usize, usize) {
        let p = self.patch_area();
        let (ft, tt) = self.top_cell(i / p);
        let w = i % p;
        (ft * self.patch.0 + w % self.patch.0, tt * self.patch.1 + w / self.patch.0)
    }
}

/// Grid coordinates of a sequence entry; `None` for START symbols.
pub type Origin = Option<(usize, usize)>;

/// Codemap flattened into generation order, START symbols first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearSeq {
    pub tokens: Vec<usize>,
    pub origin: Vec<Origin>,
}

impl LinearSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One START, then frame by frame with ascending frequency in each frame.
pub fn linearize_top(grid: &CodeGrid, start: usize) -> LinearSeq {
    let (f, t) = grid.shape();
    let mut tokens = Vec::with_capacity(f * t + 1);
    let mut origin = Vec::with_capacity(f * t + 1);
    tokens.push(start);
    origin.push(None);
    for c in 0..t {
        for r in 0..f {
            tokens.push(grid.get(r, c));
            origin.push(Some((r, c)));
        }
    }
    LinearSeq { tokens, origin }
}

pub fn delinearize_top(seq: &LinearSeq, shape: (usize, usize)) -> Result<CodeGrid> {
    let (f, t) = shape;
    ensure!(
        seq.len() == f * t + 1,
        InvalidInput,
        "top sequence of length {} for a {f}x{t} grid",
        seq.len()
    );
    let mut grid = CodeGrid::filled(f, t, 0);
    for (tok, o) in seq.tokens.iter().zip(&seq.origin).skip(1) {
        let (r, c) = o.ok_or_else(|| crate::Error::InvalidInput("START symbol inside the top sequence".into()))?;
        grid.set(r, c, *tok);
    }
    Ok(grid)
}

/// `P` STARTs, then patches in top order, each patch in top order too.
pub fn linearize_bottom(grid: &CodeGrid, hier: &HierarchyConfig, start: usize) -> Result<LinearSeq> {
    ensure!(
        grid.shape() == hier.bottom_shape(),
        InvalidInput,
        "bottom grid {:?} does not match hierarchy {:?}",
        grid.shape(),
        hier.bottom_shape()
    );
    let n = hier.bottom_len();
    let p = hier.patch_area();
    let mut tokens = vec![start; p];
    let mut origin = vec![None; p];
    tokens.reserve(n - p);
    origin.reserve(n - p);
    for i in p..n {
        let (r, c) = hier.bottom_cell(i);
        tokens.push(grid.get(r, c));
        origin.push(Some((r, c)));
    }
    Ok(LinearSeq { tokens, origin })
}

pub fn delinearize_bottom(seq: &LinearSeq, hier: &HierarchyConfig) -> Result<CodeGrid> {
    ensure!(
        seq.len() == hier.bottom_len(),
        InvalidInput,
        "bottom sequence of length {}, hierarchy needs {}",
        seq.len(),
        hier.bottom_len()
    );
    let (f, t) = hier.bottom_shape();
    let mut grid = CodeGrid::filled(f, t, 0);
    for (tok, o) in seq.tokens.iter().zip(&seq.origin).skip(hier.patch_area()) {
        let (r, c) = o.ok_or_else(|| crate::Error::InvalidInput("START symbol inside the bottom sequence".into()))?;
        grid.set(r, c, *tok);
    }
    Ok(grid)
}

/// Top sequence position that bottom position `i` is conditioned on.
/// The first `P` positions map to the top START.
pub fn parent_index(i: usize, hier: &HierarchyConfig) -> Result<usize> {
    ensure!(
        i < hier.bottom_len(),
        InvalidInput,
        "bottom position {i} beyond sequence length {}",
        hier.bottom_len()
    );
    Ok(i / hier.patch_area())
}
