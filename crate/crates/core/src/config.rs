//! Run configuration shared by the CLI, the service and the tests.
//!
//! Every section rejects unknown keys. Two built-in profiles exist:
//! [`RunConfig::toy`] (the default, sized for CPU training in minutes) and
//! [`RunConfig::paper`] (full-size shapes, documentation grade).

use serde::{Deserialize, Serialize};

use crate::dsp::{MelConfig, MelIFCodec, StftConfig};
use crate::error::{ensure, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub n_mels: usize,
    pub break_freq_hz: f64,
    pub log_amp_floor: f64,
    /// Frames per gram; waveforms are padded or cut to fit.
    pub n_frames: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 128,
            sample_rate: 16_000,
            n_mels: 128,
            break_freq_hz: 240.0,
            log_amp_floor: -8.0,
            n_frames: 32,
        }
    }
}

impl DspConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            n_mels: self.n_mels,
            break_freq: self.break_freq_hz,
            f_max: self.sample_rate as f64 / 2.0,
            norm_const: 1.0,
        }
    }

    pub fn codec(&self) -> Result<MelIFCodec> {
        MelIFCodec::new(self.stft(), self.mel(), self.log_amp_floor, Some(self.n_frames))
    }

    /// Waveform length that maps to exactly `n_frames` frames.
    pub fn note_samples(&self) -> usize {
        self.stft().padded_len(self.n_frames)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft().validate()?;
        self.mel().validate()?;
        ensure!(
            self.n_mels <= self.n_fft / 2,
            InvalidConfig,
            "dsp.n_mels {} exceeds n_fft/2 = {}",
            self.n_mels,
            self.n_fft / 2
        );
        ensure!(self.n_frames > 0, InvalidConfig, "dsp.n_frames must be positive");
        ensure!(self.log_amp_floor.is_finite(), InvalidConfig, "dsp.log_amp_floor must be finite");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    /// `(n_mels, n_frames)` of the input gram.
    pub input_shape: (usize, usize),
    /// Input → bottom codemap ratio `(freq, time)`, powers of two.
    pub bottom_downsample: (usize, usize),
    /// Bottom → top ratio `(D_F, D_T)`, powers of two.
    pub top_downsample: (usize, usize),
    pub codebook_size: usize,
    pub code_dim: usize,
    pub beta: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub channels: usize,
    pub res_blocks: usize,
    pub init_std: f64,
    /// Steps without assignment before a code is re-seeded.
    pub dead_code_steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            input_shape: (128, 32),
            bottom_downsample: (8, 8),
            top_downsample: (2, 2),
            codebook_size: 64,
            code_dim: 16,
            beta: 0.25,
            decay: 0.99,
            epsilon: 1e-5,
            channels: 32,
            res_blocks: 2,
            init_std: 0.001,
            dead_code_steps: 100,
            lr: 1e-3,
            batch_size: 16,
            steps: 2000,
        }
    }
}

fn log2_exact(x: usize) -> Option<usize> {
    (x > 0 && x.is_power_of_two()).then(|| x.trailing_zeros() as usize)
}

impl VqVaeConfig {
    pub fn bottom_shape(&self) -> (usize, usize) {
        (
            self.input_shape.0 / self.bottom_downsample.0,
            self.input_shape.1 / self.bottom_downsample.1,
        )
    }

    pub fn top_shape(&self) -> (usize, usize) {
        let (f, t) = self.bottom_shape();
        (f / self.top_downsample.0, t / self.top_downsample.1)
    }

    pub fn hierarchy(&self) -> crate::lm::HierarchyConfig {
        crate::lm::HierarchyConfig {
            top_shape: self.top_shape(),
            patch: self.top_downsample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("bottom_downsample", self.bottom_downsample), ("top_downsample", self.top_downsample)] {
            ensure!(
                log2_exact(r.0).is_some() && log2_exact(r.1).is_some(),
                InvalidConfig,
                "vqvae.{name} {r:?} must be powers of two"
            );
        }
        let (f, t) = self.input_shape;
        let total = (
            self.bottom_downsample.0 * self.top_downsample.0,
            self.bottom_downsample.1 * self.top_downsample.1,
        );
        ensure!(
            f > 0 && t > 0 && f % total.0 == 0 && t % total.1 == 0,
            InvalidConfig,
            "input shape {:?} not divisible by cumulative downsampling {total:?}",
            self.input_shape
        );
        ensure!(self.codebook_size >= 2, InvalidConfig, "vqvae.codebook_size must be at least 2");
        ensure!(
            self.codebook_size <= u16::MAX as usize + 1,
            InvalidConfig,
            "vqvae.codebook_size must fit in u16 codes"
        );
        ensure!(self.code_dim > 0 && self.channels > 0, InvalidConfig, "vqvae widths must be positive");
        ensure!(self.beta > 0.0, InvalidConfig, "vqvae.beta must be positive");
        ensure!(self.decay > 0.0 && self.decay < 1.0, InvalidConfig, "vqvae.decay must lie in (0, 1)");
        ensure!(self.epsilon > 0.0, InvalidConfig, "vqvae.epsilon must be positive");
        ensure!(self.init_std > 0.0, InvalidConfig, "vqvae.init_std must be positive");
        ensure!(self.lr > 0.0 && self.batch_size > 0, InvalidConfig, "vqvae.lr and batch_size must be positive");
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub token_embed_dim: usize,
    /// Size of each of the two positional factors.
    pub pos_embed_dim: usize,
    pub label_embed_dim: usize,
    pub ffn_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            model_dim: 64,
            token_embed_dim: 40,
            pos_embed_dim: 4,
            label_embed_dim: 8,
            ffn_dim: 128,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.token_embed_dim + 2 * self.pos_embed_dim + 2 * self.label_embed_dim == self.model_dim,
            InvalidConfig,
            "token {} + 2×pos {} + 2×label {} must equal model dim {}",
            self.token_embed_dim,
            self.pos_embed_dim,
            self.label_embed_dim,
            self.model_dim
        );
        ensure!(
            self.n_heads > 0 && self.model_dim % self.n_heads == 0,
            InvalidConfig,
            "model dim {} not divisible by {} heads",
            self.model_dim,
            self.n_heads
        );
        ensure!(self.ffn_dim > 0, InvalidConfig, "ffn_dim must be positive");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub transformer: TransformerConfig,
    pub lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub steps: u64,
    pub label_smoothing: f64,
    pub grad_clip: f64,
    /// Range of the per-batch probability that a source token is hidden
    /// from the top encoder.
    pub mask_prob_range: (f64, f64),
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            transformer: TransformerConfig::default(),
            lr: 1e-3,
            warmup_steps: 500,
            batch_size: 16,
            steps: 2000,
            label_smoothing: 0.05,
            grad_clip: 5.0,
            mask_prob_range: (0.8, 1.0),
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        let (lo, hi) = self.mask_prob_range;
        ensure!(
            (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            InvalidConfig,
            "lm.mask_prob_range {:?} must be an ordered sub-range of [0, 1]",
            self.mask_prob_range
        );
        ensure!(
            (0.0..1.0).contains(&self.label_smoothing),
            InvalidConfig,
            "lm.label_smoothing must lie in [0, 1)"
        );
        ensure!(self.grad_clip > 0.0, InvalidConfig, "lm.grad_clip must be positive");
        ensure!(self.lr > 0.0 && self.batch_size > 0, InvalidConfig, "lm.lr and batch_size must be positive");
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_p: 0.8,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.top_p > 0.0 && self.top_p <= 1.0,
            InvalidConfig,
            "top_p {} must lie in (0, 1]",
            self.top_p
        );
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            InvalidConfig,
            "temperature {} must be positive",
            self.temperature
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_notes: usize,
    pub pitch_min: u8,
    pub pitch_max: u8,
    pub families: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_notes: 256,
            pitch_min: 48,
            pitch_max: 72,
            families: crate::dataset::SYNTH_FAMILIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (crate::dataset::PITCH_MIN, crate::dataset::PITCH_MAX);
        ensure!(
            self.pitch_min >= lo && self.pitch_max <= hi && self.pitch_min <= self.pitch_max,
            InvalidConfig,
            "data pitch range {}..={} must lie within {lo}..={hi}",
            self.pitch_min,
            self.pitch_max
        );
        ensure!(!self.families.is_empty(), InvalidConfig, "data.families must not be empty");
        ensure!(self.families.len() <= 256, InvalidConfig, "at most 256 instrument families");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dsp: DspConfig,
    pub vqvae: VqVaeConfig,
    pub lm: LmConfig,
    pub sampler: SamplerConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl RunConfig {
    pub fn toy() -> Self {
        Self {
            seed: 0,
            dsp: DspConfig::default(),
            vqvae: VqVaeConfig::default(),
            lm: LmConfig::default(),
            sampler: SamplerConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Full-size shapes: 1024×128 grams, 64×8 / 32×4 codemaps, K = 512,
    /// 6+6 layer Transformers of width 512.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            dsp: DspConfig {
                n_fft: 2048,
                hop: 512,
                sample_rate: 16_000,
                n_mels: 1024,
                break_freq_hz: 240.0,
                log_amp_floor: -8.0,
                n_frames: 128,
            },
            vqvae: VqVaeConfig {
                input_shape: (1024, 128),
                bottom_downsample: (16, 16),
                top_downsample: (2, 2),
                codebook_size: 512,
                code_dim: 64,
                channels: 128,
                dead_code_steps: 5000,
                lr: 3e-4,
                ..VqVaeConfig::default()
            },
            lm: LmConfig {
                transformer: TransformerConfig {
                    n_layers_enc: 6,
                    n_layers_dec: 6,
                    n_heads: 8,
                    model_dim: 512,
                    token_embed_dim: 416,
                    pos_embed_dim: 16,
                    label_embed_dim: 32,
                    ffn_dim: 2048,
                },
                lr: 1e-4,
                ..LmConfig::default()
            },
            sampler: SamplerConfig::default(),
            data: DataConfig {
                pitch_min: 24,
                pitch_max: 84,
                ..DataConfig::default()
            },
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(crate::Error::InvalidConfig(format!("unknown profile `{other}` (expected toy or paper)"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| crate::Error::InvalidConfig(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.vqvae.validate()?;
        self.lm.validate()?;
        self.sampler.validate()?;
        self.data.validate()?;
        ensure!(
            self.vqvae.input_shape == (self.dsp.n_mels, self.dsp.n_frames),
            InvalidConfig,
            "vqvae.input_shape {:?} differs from (dsp.n_mels, dsp.n_frames) = {:?}",
            self.vqvae.input_shape,
            (self.dsp.n_mels, self.dsp.n_frames)
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        RunConfig::toy().validate().unwrap();
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn paper_shapes() {
        let p = RunConfig::paper();
        assert_eq!(p.vqvae.bottom_shape(), (64, 8));
        assert_eq!(p.vqvae.top_shape(), (32, 4));
        let t = &p.lm.transformer;
        assert_eq!((t.token_embed_dim, 2 * t.pos_embed_dim, t.label_embed_dim), (416, 32, 32));
        assert_eq!(t.model_dim, 512);
    }

    #[test]
    fn toy_shapes() {
        let t = RunConfig::toy();
        assert_eq!(t.vqvae.bottom_shape(), (16, 4));
        assert_eq!(t.vqvae.top_shape(), (8, 2));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"dsp": {"n_fft": 512, "bogus": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": true}"#).is_err());
    }

    #[test]
    fn partial_documents_take_toy_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 9, "sampler": {"top_p": 0.5}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sampler.top_p, 0.5);
        assert_eq!(c.dsp, DspConfig::default());
    }

    #[test]
    fn json_round_trip() {
        for c in [RunConfig::toy(), RunConfig::paper()] {
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn inconsistent_input_shape_rejected() {
        let mut c = RunConfig::toy();
        c.vqvae.input_shape = (64, 32);
        assert!(c.validate().is_err());
    }
}
