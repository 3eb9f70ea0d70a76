use serde::{Deserialize, Serialize};

use super::Grid;
use crate::error::{ensure, Result};

/// Log-linear frequency scale `m = Q·ln(1 + f / break_freq)`.
///
/// A lower break frequency than the usual 700 Hz spends more mel rows on
/// the range where note fundamentals and low harmonics live.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub break_freq: f64,
    /// Highest represented frequency, normally Nyquist.
    pub f_max: f64,
    pub norm_const: f64,
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_mels >= 2, InvalidConfig, "n_mels must be at least 2");
        ensure!(
            self.break_freq > 0.0 && self.break_freq.is_finite(),
            InvalidConfig,
            "break frequency must be positive, got {}",
            self.break_freq
        );
        ensure!(self.f_max > 0.0, InvalidConfig, "f_max must be positive");
        ensure!(self.norm_const > 0.0, InvalidConfig, "normalization constant must be positive");
        Ok(())
    }
}

pub fn hertz_to_mel(f: f64, cfg: &MelConfig) -> Result<f64> {
    ensure!(f >= 0.0, InvalidInput, "negative frequency {f}");
    Ok(cfg.norm_const * (f / cfg.break_freq).ln_1p())
}

pub fn mel_to_hertz(m: f64, cfg: &MelConfig) -> Result<f64> {
    ensure!(m >= 0.0, InvalidInput, "negative mel value {m}");
    Ok(mel_to_hertz_unchecked(m, cfg))
}

fn mel_to_hertz_unchecked(m: f64, cfg: &MelConfig) -> f64 {
    cfg.break_freq * (m / cfg.norm_const).exp_m1()
}

/// Triangular mel filters plus the two normalizations used for warping
/// (rows sum to one) and unwarping (columns sum to one).
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Grid,
    centers_hz: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
}

/// Filter centres are equally spaced in mel between DC and the highest
/// retained bin, whose frequency is `(n_bins - 1) * f_max / n_bins`. With
/// `n_mels == n_bins` on a linear scale every centre falls on a bin and the
/// bank is the identity.
pub fn build_mel_filterbank(cfg: &MelConfig, n_bins: usize) -> Result<MelFilterbank> {
    cfg.validate()?;
    ensure!(
        cfg.n_mels <= n_bins,
        InvalidConfig,
        "n_mels ({}) exceeds the number of frequency bins ({n_bins})",
        cfg.n_mels
    );
    let bin_hz = cfg.f_max / n_bins as f64;
    let top_hz = (n_bins - 1) as f64 * bin_hz;
    let top_mel = hertz_to_mel(top_hz, cfg)?;
    let step = top_mel / (cfg.n_mels - 1) as f64;
    let center_mel = |m: isize| m as f64 * step;
    let hz = |mel: f64| mel_to_hertz_unchecked(mel, cfg);

    let mut weights = Grid::zeros(cfg.n_mels, n_bins);
    let mut centers_hz = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let lo = hz(center_mel(m as isize - 1));
        let c = hz(center_mel(m as isize));
        let hi = hz(center_mel(m as isize + 1));
        centers_hz.push(c);
        let mut any = false;
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
            if w > 0.0 {
                weights.set(m, b, w);
                any = true;
            }
        }
        if !any {
            // Filter narrower than the bin spacing: snap to the nearest bin.
            let b = ((c / bin_hz).round() as usize).min(n_bins - 1);
            weights.set(m, b, 1.0);
        }
    }
    let row_sums = (0..cfg.n_mels).map(|m| weights.row(m).iter().sum()).collect();
    let col_sums = (0..n_bins)
        .map(|b| (0..cfg.n_mels).map(|m| weights.get(m, b)).sum())
        .collect();
    Ok(MelFilterbank {
        weights,
        centers_hz,
        row_sums,
        col_sums,
    })
}

impl MelFilterbank {
    pub fn weights(&self) -> &Grid {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Mel row whose centre is closest to `f`.
    pub fn row_for_hz(&self, f: f64) -> usize {
        (0..self.n_mels())
            .min_by(|&a, &b| {
                (self.centers_hz[a] - f)
                    .abs()
                    .total_cmp(&(self.centers_hz[b] - f).abs())
            })
            .unwrap_or(0)
    }

    /// Linear-frequency grid → mel grid (weighted average per filter).
    pub fn warp(&self, linear: &Grid) -> Result<Grid> {
        ensure!(
            linear.rows() == self.n_bins(),
            InvalidShape,
            "expected {} frequency rows, got {}",
            self.n_bins(),
            linear.rows()
        );
        let cols = linear.cols();
        let mut out = Grid::zeros(self.n_mels(), cols);
        for m in 0..self.n_mels() {
            let w = self.weights.row(m);
            for (b, &wb) in w.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                let scale = wb / self.row_sums[m];
                let src = linear.row(b);
                let dst = &mut out.as_mut_slice()[m * cols..(m + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += scale * s;
                }
            }
        }
        Ok(out)
    }

    /// Mel grid → linear-frequency grid through the transpose of the
    /// column-normalized bank.
    pub fn unwarp(&self, mel: &Grid) -> Result<Grid> {
        ensure!(
            mel.rows() == self.n_mels(),
            InvalidShape,
            "expected {} mel rows, got {}",
            self.n_mels(),
            mel.rows()
        );
        let cols = mel.cols();
        let mut out = Grid::zeros(self.n_bins(), cols);
        for m in 0..self.n_mels() {
            let w = self.weights.row(m);
            let src = mel.row(m);
            for (b, &wb) in w.iter().enumerate() {
                if wb == 0.0 {
                    continue;
                }
                let scale = wb / self.col_sums[b];
                let dst = &mut out.as_mut_slice()[b * cols..(b + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += scale * s;
                }
            }
        }
        Ok(out)
    }
}
