use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lm::HierarchyConfig;

/// Row-major integer grid; row 0 is the lowest frequency band.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeGrid {
    rows: usize,
    cols: usize,
    codes: Vec<usize>,
}

impl CodeGrid {
    pub fn new(rows: usize, cols: usize, codes: Vec<usize>) -> Result<Self> {
        ensure!(
            rows * cols == codes.len(),
            InvalidShape,
            "{} codes for a {rows}×{cols} grid",
            codes.len()
        );
        Ok(Self { rows, cols, codes })
    }

    pub fn filled(rows: usize, cols: usize, value: usize) -> Self {
        Self {
            rows,
            cols,
            codes: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut codes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                codes.push(f(r, c));
            }
        }
        Self { rows, cols, codes }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.codes[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: usize) {
        self.codes[r * self.cols + c] = v;
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn to_nested(&self) -> Vec<Vec<usize>> {
        self.codes.chunks(self.cols.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn from_nested(rows: &[Vec<usize>]) -> Result<Self> {
        ensure!(!rows.is_empty(), InvalidInput, "empty code grid");
        let cols = rows[0].len();
        ensure!(
            cols > 0 && rows.iter().all(|r| r.len() == cols),
            InvalidInput,
            "code grid rows must be nonempty and of equal length"
        );
        Ok(Self {
            rows: rows.len(),
            cols,
            codes: rows.concat(),
        })
    }

    pub fn check_codes(&self, k: usize) -> Result<()> {
        if let Some(&bad) = self.codes.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidInput(format!("code {bad} out of range for K = {k}")));
        }
        Ok(())
    }
}

/// Top and bottom codemaps of one sound.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodemapPair {
    pub top: CodeGrid,
    pub bottom: CodeGrid,
}

impl CodemapPair {
    pub fn validate(&self, hier: &HierarchyConfig, k: usize) -> Result<()> {
        ensure!(
            self.top.shape() == hier.top_shape,
            InvalidInput,
            "top codemap {:?}, expected {:?}",
            self.top.shape(),
            hier.top_shape
        );
        ensure!(
            self.bottom.shape() == hier.bottom_shape(),
            InvalidInput,
            "bottom codemap {:?}, expected {:?}",
            self.bottom.shape(),
            hier.bottom_shape()
        );
        self.top.check_codes(k)?;
        self.bottom.check_codes(k)
    }
}
