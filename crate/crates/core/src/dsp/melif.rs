use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{build_mel_filterbank, istft, stft, ComplexGram, Grid, MelConfig, MelFilterbank, StftConfig};
use crate::error::{ensure, Result};

/// Two-channel mel spectrogram: natural-log amplitude and instantaneous
/// frequency normalized to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelIFGram {
    pub log_amp: Grid,
    pub if_norm: Grid,
    /// Log-amplitude floor applied by [`phase_threshold`].
    pub threshold: f64,
}

impl MelIFGram {
    pub fn silent(n_mels: usize, n_frames: usize, threshold: f64) -> Self {
        Self {
            log_amp: Grid::filled(n_mels, n_frames, threshold),
            if_norm: Grid::zeros(n_mels, n_frames),
            threshold,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.log_amp.shape()
    }

    pub fn check_shape(&self) -> Result<()> {
        ensure!(
            self.log_amp.shape() == self.if_norm.shape(),
            InvalidShape,
            "log-amplitude {:?} and IF {:?} channels differ in shape",
            self.log_amp.shape(),
            self.if_norm.shape()
        );
        Ok(())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Frame-to-frame wrapped phase difference divided by π. Column 0 keeps
/// the absolute phase so the transform is invertible.
pub fn phase_to_if(phase: &Grid) -> Grid {
    let (rows, cols) = phase.shape();
    Grid::from_fn(rows, cols, |r, t| {
        if t == 0 {
            phase.get(r, 0) / PI
        } else {
            wrap_phase(phase.get(r, t) - phase.get(r, t - 1)) / PI
        }
    })
}

pub fn if_to_phase(if_norm: &Grid) -> Grid {
    let (rows, cols) = if_norm.shape();
    let mut out = Grid::zeros(rows, cols);
    for r in 0..rows {
        let mut acc = 0.0;
        for t in 0..cols {
            acc = wrap_phase(acc + if_norm.get(r, t) * PI);
            out.set(r, t, acc);
        }
    }
    out
}

/// Clamps log-amplitude from below at `threshold` and zeroes the IF of
/// every clamped cell.
pub fn phase_threshold(gram: &MelIFGram, threshold: f64) -> MelIFGram {
    let mut out = gram.clone();
    out.threshold = threshold;
    let amp = out.log_amp.as_mut_slice();
    let ifs = out.if_norm.as_mut_slice();
    for (a, f) in amp.iter_mut().zip(ifs.iter_mut()) {
        if *a <= threshold || a.is_nan() {
            *a = threshold;
            *f = 0.0;
        }
    }
    out
}

/// Zero-pads or truncates `waveform` to exactly `n_frames` STFT frames.
pub fn fit_frames(waveform: &[f64], cfg: &StftConfig, n_frames: usize) -> Vec<f64> {
    let len = cfg.padded_len(n_frames);
    let mut out = waveform[..waveform.len().min(len)].to_vec();
    out.resize(len, 0.0);
    out
}

/// Reusable encoder/decoder holding a precomputed filterbank.
#[derive(Clone, Debug)]
pub struct MelIFCodec {
    stft: StftConfig,
    mel: MelConfig,
    floor: f64,
    n_frames: Option<usize>,
    bank: MelFilterbank,
}

impl MelIFCodec {
    pub fn new(stft: StftConfig, mel: MelConfig, floor: f64, n_frames: Option<usize>) -> Result<Self> {
        stft.validate()?;
        ensure!(floor.is_finite(), InvalidConfig, "log-amplitude floor must be finite");
        ensure!(
            n_frames.is_none_or(|n| n > 0),
            InvalidConfig,
            "frame count must be positive"
        );
        let bank = build_mel_filterbank(&mel, stft.n_bins())?;
        Ok(Self {
            stft,
            mel,
            floor,
            n_frames,
            bank,
        })
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn n_frames(&self) -> Option<usize> {
        self.n_frames
    }

    pub fn encode(&self, waveform: &[f64]) -> Result<MelIFGram> {
        let fitted;
        let signal = match self.n_frames {
            Some(n) => {
                fitted = fit_frames(waveform, &self.stft, n);
                &fitted[..]
            }
            None => waveform,
        };
        let spec = stft(signal, &self.stft)?;
        let log_mag = spec.magnitude.map(|m| m.max(1e-30).ln());
        let if_lin = phase_to_if(&spec.phase);
        let gram = MelIFGram {
            log_amp: self.bank.warp(&log_mag)?,
            if_norm: self.bank.warp(&if_lin)?,
            threshold: self.floor,
        };
        Ok(phase_threshold(&gram, self.floor))
    }

    pub fn decode(&self, gram: &MelIFGram) -> Result<Vec<f64>> {
        gram.check_shape()?;
        ensure!(
            gram.log_amp.rows() == self.bank.n_mels(),
            InvalidInput,
            "gram has {} mel rows, codec expects {}",
            gram.log_amp.rows(),
            self.bank.n_mels()
        );
        ensure!(gram.log_amp.cols() > 0, InvalidInput, "gram has no frames");
        if let Some(n) = self.n_frames {
            ensure!(
                gram.log_amp.cols() == n,
                InvalidInput,
                "gram has {} frames, codec expects {n}",
                gram.log_amp.cols()
            );
        }
        let log_mag = self.bank.unwarp(&gram.log_amp)?;
        let if_lin = self.bank.unwarp(&gram.if_norm)?;
        let spec = ComplexGram {
            magnitude: log_mag.map(f64::exp),
            phase: if_to_phase(&if_lin),
            nyquist: vec![0.0; gram.log_amp.cols()],
        };
        istft(&spec, &self.stft)
    }
}

pub fn melif_encode(
    waveform: &[f64],
    stft_cfg: &StftConfig,
    mel_cfg: &MelConfig,
    threshold: f64,
) -> Result<MelIFGram> {
    MelIFCodec::new(*stft_cfg, *mel_cfg, threshold, None)?.encode(waveform)
}

pub fn melif_decode(gram: &MelIFGram, stft_cfg: &StftConfig, mel_cfg: &MelConfig) -> Result<Vec<f64>> {
    MelIFCodec::new(*stft_cfg, *mel_cfg, gram.threshold, None)?.decode(gram)
}
