use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::SeededRng;

/// Vector-quantization dictionary with exponential-moving-average statistics.
///
/// After every [`Codebook::ema_update`], `codewords[k] = ema_sums[k] / n_k`
/// where `n_k = (ema_counts[k] + ε) / (N + K·ε) · N` and `N = Σ ema_counts`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    k: usize,
    d: usize,
    pub codewords: Vec<f64>,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
    /// Training step at which each code was last assigned.
    #[serde(default)]
    pub last_used: Vec<u64>,
}

/// Result of projecting a set of vectors onto a codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    /// `N × D`, row `i` is `codewords[indices[i]]`.
    pub z_q: Vec<f64>,
    /// Mean over vectors of `‖z − z_q‖²`.
    pub commit_loss: f64,
}

impl Codebook {
    /// Codewords drawn from `Normal(0, std²)`; EMA state starts at count 1
    /// with sums equal to the codewords.
    pub fn init(k: usize, d: usize, std: f64, decay: f64, epsilon: f64, rng: &mut SeededRng) -> Result<Self> {
        let codewords: Vec<f64> = (0..k * d).map(|_| std * rng.normal()).collect();
        Self::from_codewords(k, d, codewords, decay, epsilon)
    }

    pub fn from_codewords(k: usize, d: usize, codewords: Vec<f64>, decay: f64, epsilon: f64) -> Result<Self> {
        ensure!(k >= 2, InvalidConfig, "codebook needs at least 2 codes, got {k}");
        ensure!(d >= 1, InvalidConfig, "code dimension must be positive");
        ensure!(
            codewords.len() == k * d,
            InvalidShape,
            "{} codeword values for {k}×{d}",
            codewords.len()
        );
        ensure!(decay > 0.0 && decay < 1.0, InvalidConfig, "decay {decay} outside (0, 1)");
        ensure!(epsilon > 0.0, InvalidConfig, "epsilon must be positive");
        ensure!(codewords.iter().all(|x| x.is_finite()), Numeric, "non-finite codeword");
        Ok(Self {
            k,
            d,
            ema_counts: vec![1.0; k],
            ema_sums: codewords.clone(),
            codewords,
            decay,
            epsilon,
            last_used: vec![0; k],
        })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn codeword(&self, i: usize) -> &[f64] {
        &self.codewords[i * self.d..(i + 1) * self.d]
    }

    /// Index of the nearest codeword to `z` (ties go to the lowest index).
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.k {
            let dist: f64 = self.codeword(k).iter().zip(z).map(|(c, x)| (x - c) * (x - c)).sum();
            if dist < best_d {
                best_d = dist;
                best = k;
            }
        }
        best
    }

    /// Nearest-codeword projection of `z` (`N × D`, row-major).
    pub fn quantize(&self, z: &[f64]) -> Result<Quantized> {
        ensure!(
            z.len() % self.d == 0,
            InvalidInput,
            "input length {} is not a multiple of code dim {}",
            z.len(),
            self.d
        );
        let n = z.len() / self.d;
        let mut indices = Vec::with_capacity(n);
        let mut z_q = Vec::with_capacity(z.len());
        let mut commit = 0.0;
        for row in z.chunks(self.d) {
            let k = self.nearest(row);
            indices.push(k);
            let c = self.codeword(k);
            commit += row.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            z_q.extend_from_slice(c);
        }
        Ok(Quantized {
            indices,
            z_q,
            commit_loss: if n == 0 { 0.0 } else { commit / n as f64 },
        })
    }

    /// Codeword rows for `indices`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.k {
                return Err(Error::InvalidInput(format!("code {i} out of range for K = {}", self.k)));
            }
            out.extend_from_slice(self.codeword(i));
        }
        Ok(out)
    }

    /// One EMA step from vectors `z` (`N × D`) assigned to `indices`.
    pub fn ema_update(&mut self, z: &[f64], indices: &[usize], step: u64) -> Result<()> {
        ensure!(
            z.len() == indices.len() * self.d,
            InvalidShape,
            "{} values for {} assignments of dim {}",
            z.len(),
            indices.len(),
            self.d
        );
        let g = self.decay;
        let mut counts = vec![0.0; self.k];
        let mut sums = vec![0.0; self.k * self.d];
        for (row, &k) in z.chunks(self.d).zip(indices) {
            ensure!(k < self.k, InvalidInput, "code {k} out of range for K = {}", self.k);
            counts[k] += 1.0;
            for (s, x) in sums[k * self.d..(k + 1) * self.d].iter_mut().zip(row) {
                *s += x;
            }
            self.last_used[k] = step;
        }
        for k in 0..self.k {
            self.ema_counts[k] = g * self.ema_counts[k] + (1.0 - g) * counts[k];
        }
        for (s, n) in self.ema_sums.iter_mut().zip(&sums) {
            *s = g * *s + (1.0 - g) * n;
        }
        self.refresh_codewords()
    }

    fn refresh_codewords(&mut self) -> Result<()> {
        let total: f64 = self.ema_counts.iter().sum();
        let denom = total + self.k as f64 * self.epsilon;
        for k in 0..self.k {
            let n = (self.ema_counts[k] + self.epsilon) / denom * total;
            for j in 0..self.d {
                self.codewords[k * self.d + j] = self.ema_sums[k * self.d + j] / n;
            }
        }
        ensure!(
            self.codewords.iter().all(|x| x.is_finite()),
            Numeric,
            "codebook update produced non-finite codewords"
        );
        Ok(())
    }

    /// Re-seeds codes unused for at least `patience` steps with rows of `z`
    /// chosen at random. Returns how many codes were replaced.
    pub fn reseed_dead(&mut self, z: &[f64], step: u64, patience: u64, rng: &mut SeededRng) -> usize {
        let n = z.len() / self.d;
        if n == 0 || patience == 0 {
            return 0;
        }
        let mut replaced = 0;
        for k in 0..self.k {
            if step.saturating_sub(self.last_used[k]) < patience {
                continue;
            }
            let r = rng.below(n);
            let row = &z[r * self.d..(r + 1) * self.d];
            self.codewords[k * self.d..(k + 1) * self.d].copy_from_slice(row);
            self.ema_sums[k * self.d..(k + 1) * self.d].copy_from_slice(row);
            self.ema_counts[k] = 1.0;
            self.last_used[k] = step;
            replaced += 1;
        }
        replaced
    }
}

/// `exp(H)` of the empirical code distribution; lies in `[1, K]`.
pub fn perplexity(indices: &[usize], k: usize) -> Result<f64> {
    ensure!(!indices.is_empty(), InvalidInput, "perplexity of an empty index set");
    let mut counts = vec![0usize; k];
    for &i in indices {
        ensure!(i < k, InvalidInput, "code {i} out of range for K = {k}");
        counts[i] += 1;
    }
    let used: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if used.iter().all(|&c| c == used[0]) {
        // Uniform over the used codes: exp(H) is exactly their number.
        return Ok(used.len() as f64);
    }
    let n = indices.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.exp().clamp(1.0, k as f64))
}
