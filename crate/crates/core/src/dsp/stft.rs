use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Grid;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_fft.is_power_of_two() && self.n_fft >= 4,
            InvalidConfig,
            "n_fft must be a power of two >= 4, got {}",
            self.n_fft
        );
        ensure!(self.hop > 0, InvalidConfig, "hop must be positive");
        ensure!(
            self.n_fft >= 2 * self.hop,
            InvalidConfig,
            "n_fft ({}) must be at least twice the hop ({})",
            self.n_fft,
            self.hop
        );
        ensure!(self.sample_rate > 0, InvalidConfig, "sample_rate must be positive");
        Ok(())
    }

    /// Rows kept in a [`ComplexGram`]: DC up to, excluding, Nyquist.
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.n_fft as f64
    }

    pub fn n_frames(&self, len: usize) -> usize {
        debug_assert!(len >= self.n_fft);
        (len - self.n_fft).div_ceil(self.hop) + 1
    }

    /// Signal length covered by `n_frames` frames.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        (n_frames - 1) * self.hop + self.n_fft
    }
}

/// One-sided STFT. `magnitude` and `phase` hold bins `0..n_fft/2`; the
/// real-valued Nyquist bin is carried separately so the transform stays
/// exactly invertible.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGram {
    pub magnitude: Grid,
    pub phase: Grid,
    pub nyquist: Vec<f64>,
}

impl ComplexGram {
    pub fn zeros(n_bins: usize, n_frames: usize) -> Self {
        Self {
            magnitude: Grid::zeros(n_bins, n_frames),
            phase: Grid::zeros(n_bins, n_frames),
            nyquist: vec![0.0; n_frames],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.magnitude.cols()
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn principal(phase: f64) -> f64 {
    if phase <= -PI {
        phase + 2.0 * PI
    } else {
        phase
    }
}

pub fn stft(waveform: &[f64], cfg: &StftConfig) -> Result<ComplexGram> {
    cfg.validate()?;
    ensure!(
        waveform.len() >= cfg.n_fft,
        InvalidInput,
        "waveform of {} samples is shorter than one window ({})",
        waveform.len(),
        cfg.n_fft
    );
    let n = cfg.n_fft;
    let n_frames = cfg.n_frames(waveform.len());
    let n_bins = cfg.n_bins();
    let window = hann_window(n);
    let fft = FftPlanner::new().plan_fft_forward(n);

    let mut out = ComplexGram::zeros(n_bins, n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = waveform.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, z) in buf.iter().take(n_bins).enumerate() {
            out.magnitude.set(k, t, z.norm());
            out.phase.set(k, t, principal(z.im.atan2(z.re)));
        }
        out.nyquist[t] = buf[n / 2].re;
    }
    Ok(out)
}

/// Below this fraction of its peak the overlap-add normalizer is clamped,
/// so the first and last samples are tapered instead of amplified.
pub(crate) const NORM_FLOOR: f64 = 0.1;

/// Weighted overlap-add inverse: each frame is windowed again and the sum
/// is divided by the accumulated squared window.
pub fn istft(gram: &ComplexGram, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.n_fft;
    let n_bins = cfg.n_bins();
    ensure!(
        gram.magnitude.rows() == n_bins && gram.phase.shape() == gram.magnitude.shape(),
        InvalidInput,
        "gram with {} bins does not match n_fft {} ({} bins expected)",
        gram.magnitude.rows(),
        n,
        n_bins
    );
    let n_frames = gram.n_frames();
    ensure!(n_frames > 0, InvalidInput, "gram has no frames");
    ensure!(
        gram.nyquist.len() == n_frames,
        InvalidInput,
        "nyquist row has {} frames, expected {}",
        gram.nyquist.len(),
        n_frames
    );

    let window = hann_window(n);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let len = cfg.padded_len(n_frames);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..n_frames {
        for k in 0..n_bins {
            buf[k] = Complex::from_polar(gram.magnitude.get(k, t), gram.phase.get(k, t));
        }
        // DC must be real for a real frame.
        buf[0] = Complex::new(buf[0].re, 0.0);
        buf[n / 2] = Complex::new(gram.nyquist[t], 0.0);
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += window[i] * buf[i].re / n as f64;
            norm[start + i] += window[i] * window[i];
        }
    }
    let floor = NORM_FLOOR * norm.iter().fold(0.0f64, |m, &w| m.max(w));
    for (y, w) in out.iter_mut().zip(&norm) {
        *y /= w.max(floor);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn cfg(n_fft: usize) -> StftConfig {
        StftConfig {
            n_fft,
            hop: n_fft / 4,
            sample_rate: 16_000,
        }
    }

    /// Direct O(N²) DFT of one windowed frame.
    fn dft_frame(frame: &[f64]) -> Vec<(f64, f64)> {
        let n = frame.len();
        (0..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_gram() {
        let g = stft(&vec![0.0; 16_000], &cfg(512)).unwrap();
        assert!(g.magnitude.as_slice().iter().all(|&m| m == 0.0));
        assert!(g.phase.as_slice().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn frame_count_follows_end_padding_rule() {
        let c = cfg(2048);
        let g = stft(&vec![0.0; 64_000], &c).unwrap();
        // ceil((64000 - 2048) / 512) + 1
        assert_eq!(g.n_frames(), 122);
        assert_eq!(g.magnitude.rows(), 1024);
        let g = stft(&vec![0.0; c.padded_len(128)], &c).unwrap();
        assert_eq!(g.magnitude.shape(), (1024, 128));
    }

    #[test]
    fn short_waveform_rejected() {
        assert!(stft(&[0.0; 100], &cfg(512)).is_err());
    }

    #[test]
    fn bin_centred_sinusoid_matches_direct_dft() {
        let c = cfg(256);
        let k = 9;
        let f = k as f64 * c.bin_hz();
        let x: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * f * i as f64 / c.sample_rate as f64 + 0.3).sin())
            .collect();
        let g = stft(&x, &c).unwrap();
        let col = 3;
        let argmax = (0..c.n_bins())
            .max_by(|&a, &b| g.magnitude.get(a, col).total_cmp(&g.magnitude.get(b, col)))
            .unwrap();
        assert_eq!(argmax, k);

        let w = hann_window(c.n_fft);
        let frame: Vec<f64> = (0..c.n_fft).map(|i| x[col * c.hop + i] * w[i]).collect();
        for (bin, (re, im)) in dft_frame(&frame).into_iter().enumerate() {
            let mag = (re * re + im * im).sqrt();
            assert!((g.magnitude.get(bin, col) - mag).abs() < 1e-9, "bin {bin}");
        }
    }

    #[test]
    fn round_trip_on_noise() {
        let c = cfg(512);
        let mut rng = SeededRng::new(11);
        let x: Vec<f64> = (0..16_000).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let y = istft(&stft(&x, &c).unwrap(), &c).unwrap();
        let lo = c.n_fft;
        let hi = x.len() - c.n_fft;
        let err: f64 = (lo..hi).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (lo..hi).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6, "{}", err / norm);
    }

    #[test]
    fn zero_gram_inverts_to_silence() {
        let c = cfg(256);
        let y = istft(&ComplexGram::zeros(128, 10), &c).unwrap();
        assert_eq!(y.len(), c.padded_len(10));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_is_one_windowed_grain() {
        let c = cfg(64);
        let n_frames = 6;
        let mut rng = SeededRng::new(5);
        let mut g = ComplexGram::zeros(c.n_bins(), n_frames);
        let t0 = 2;
        for k in 0..c.n_bins() {
            g.magnitude.set(k, t0, rng.uniform());
            g.phase.set(k, t0, rng.uniform_range(-PI, PI));
        }
        g.phase.set(0, t0, 0.0);
        g.nyquist[t0] = 0.25;
        let y = istft(&g, &c).unwrap();

        // Direct inverse DFT of the Hermitian-completed frame.
        let n = c.n_fft;
        let w = hann_window(n);
        let mut norm = vec![0.0; y.len()];
        for t in 0..n_frames {
            for i in 0..n {
                norm[t * c.hop + i] += w[i] * w[i];
            }
        }
        let floor = NORM_FLOOR * norm.iter().fold(0.0f64, |m, &w| m.max(w));
        for i in 0..y.len() {
            let expected = if i >= t0 * c.hop && i < t0 * c.hop + n {
                let j = i - t0 * c.hop;
                let mut s = g.magnitude.get(0, t0) + g.nyquist[t0] * if j % 2 == 0 { 1.0 } else { -1.0 };
                for k in 1..n / 2 {
                    let a = 2.0 * PI * (k * j) as f64 / n as f64 + g.phase.get(k, t0);
                    s += 2.0 * g.magnitude.get(k, t0) * a.cos();
                }
                w[j] * s / n as f64 / norm[i].max(floor)
            } else {
                0.0
            };
            assert!((y[i] - expected).abs() < 1e-12, "sample {i}: {} vs {expected}", y[i]);
        }
    }

    #[test]
    fn istft_rejects_wrong_bin_count() {
        assert!(istft(&ComplexGram::zeros(10, 4), &cfg(64)).is_err());
    }
}
