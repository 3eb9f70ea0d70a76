//! Checkpoint directories.
//!
//! Each network is stored as an `SPNN` parameter file next to a JSON
//! sidecar holding everything else needed to rebuild it:
//!
//! ```text
//! vqvae.spnn        vqvae.json         (configs, normalization, codebooks)
//! prior_top.spnn    prior_top.json     (LmMeta)
//! prior_bottom.spnn prior_bottom.json  (LmMeta)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DspConfig, VqVaeConfig};
use crate::dsp::wav::Waveform;
use crate::dsp::{MelIFCodec, MelIFGram};
use crate::error::{ensure, Error, Result};
use crate::inpaint::Engine;
use crate::lm::{HierarchyConfig, LabelVocab, Level, LmMeta, Prior};
use crate::nn::checkpoint;
use crate::vqvae::{AmpNorm, Codebook, CodemapPair, VqVae};

pub const VQVAE_PARAMS: &str = "vqvae.spnn";
pub const VQVAE_META: &str = "vqvae.json";
const SIDECAR_VERSION: u32 = 1;

pub fn prior_files(level: Level) -> (String, String) {
    (format!("prior_{level}.spnn"), format!("prior_{level}.json"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VqVaeSidecar {
    version: u32,
    vqvae: VqVaeConfig,
    dsp: DspConfig,
    norm: AmpNorm,
    floor: f64,
    codebook_top: Codebook,
    codebook_bottom: Codebook,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorSidecar {
    version: u32,
    meta: LmMeta,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidCheckpoint(format!("{}: {e}", path.display())))
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::UnavailableModel(format!("missing checkpoint file {}", p.display())))
    }
}

fn check_codebook(cb: &Codebook, cfg: &VqVaeConfig, which: &str) -> Result<()> {
    let (k, d) = (cb.size(), cb.dim());
    ensure!(
        k == cfg.codebook_size
            && d == cfg.code_dim
            && cb.codewords.len() == k * d
            && cb.ema_sums.len() == k * d
            && cb.ema_counts.len() == k
            && (cb.last_used.is_empty() || cb.last_used.len() == k)
            && cb.codewords.iter().all(|x| x.is_finite()),
        InvalidCheckpoint,
        "{which} codebook ({k}×{d}) does not match the configured {}×{}",
        cfg.codebook_size,
        cfg.code_dim
    );
    Ok(())
}

pub fn save_vqvae(dir: &Path, model: &VqVae, dsp: &DspConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&dir.join(VQVAE_PARAMS), &checkpoint::records_from_store(&model.params))?;
    write_json(
        &dir.join(VQVAE_META),
        &VqVaeSidecar {
            version: SIDECAR_VERSION,
            vqvae: model.cfg.clone(),
            dsp: dsp.clone(),
            norm: model.norm,
            floor: model.floor,
            codebook_top: model.cb_top.clone(),
            codebook_bottom: model.cb_bottom.clone(),
        },
    )
}

pub fn load_vqvae(dir: &Path) -> Result<(VqVae, DspConfig)> {
    let meta_path = require(dir, VQVAE_META)?;
    let params_path = require(dir, VQVAE_PARAMS)?;
    let side: VqVaeSidecar = read_json(&meta_path)?;
    ensure!(side.version == SIDECAR_VERSION, InvalidCheckpoint, "unsupported sidecar version {}", side.version);
    side.vqvae.validate()?;
    side.dsp.validate()?;
    ensure!(
        side.vqvae.input_shape == (side.dsp.n_mels, side.dsp.n_frames),
        InvalidCheckpoint,
        "VQ-VAE input {:?} does not match the codec's {}×{} grams",
        side.vqvae.input_shape,
        side.dsp.n_mels,
        side.dsp.n_frames
    );
    check_codebook(&side.codebook_top, &side.vqvae, "top")?;
    check_codebook(&side.codebook_bottom, &side.vqvae, "bottom")?;
    let mut model = VqVae::new(side.vqvae, side.floor, side.norm, 0)?;
    checkpoint::assign(&mut model.params, &checkpoint::load(&params_path)?)?;
    model.cb_top = side.codebook_top;
    model.cb_bottom = side.codebook_bottom;
    Ok((model, side.dsp))
}

pub fn save_prior(dir: &Path, prior: &Prior) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (params, meta) = prior_files(prior.level());
    checkpoint::save(&dir.join(params), &checkpoint::records_from_store(&prior.params))?;
    write_json(
        &dir.join(meta),
        &PriorSidecar {
            version: SIDECAR_VERSION,
            meta: prior.meta().clone(),
        },
    )
}

pub fn load_prior(dir: &Path, level: Level) -> Result<Prior> {
    let (params, meta) = prior_files(level);
    let meta_path = require(dir, &meta)?;
    let params_path = require(dir, &params)?;
    let side: PriorSidecar = read_json(&meta_path)?;
    ensure!(side.version == SIDECAR_VERSION, InvalidCheckpoint, "unsupported sidecar version {}", side.version);
    ensure!(
        side.meta.level == level,
        InvalidCheckpoint,
        "{} holds a {} prior",
        meta_path.display(),
        side.meta.level
    );
    let mut prior = Prior::new(side.meta, 0)?;
    checkpoint::assign(&mut prior.params, &checkpoint::load(&params_path)?)?;
    Ok(prior)
}

/// A complete frozen model set with consistent shapes.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub vqvae: VqVae,
    pub dsp: DspConfig,
    pub top: Prior,
    pub bottom: Prior,
    codec: MelIFCodec,
}

impl ModelBundle {
    pub fn new(vqvae: VqVae, dsp: DspConfig, top: Prior, bottom: Prior) -> Result<Self> {
        let hier = vqvae.hierarchy();
        let k = vqvae.cfg.codebook_size;
        for p in [&top, &bottom] {
            let m = p.meta();
            ensure!(
                m.hierarchy == hier && m.codebook_size == k,
                InvalidConfig,
                "VQ-VAE codemaps top {:?} / bottom {:?} (K {k}) but {} prior expects top {:?} / bottom {:?} (K {})",
                hier.top_shape,
                hier.bottom_shape(),
                m.level,
                m.hierarchy.top_shape,
                m.hierarchy.bottom_shape(),
                m.codebook_size
            );
        }
        ensure!(
            top.meta().vocab == bottom.meta().vocab,
            InvalidConfig,
            "top and bottom priors use different label vocabularies"
        );
        Engine::new(&top, &bottom)?;
        let codec = dsp.codec()?;
        Ok(Self {
            vqvae,
            dsp,
            top,
            bottom,
            codec,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (vqvae, dsp) = load_vqvae(dir)?;
        let top = load_prior(dir, Level::Top)?;
        let bottom = load_prior(dir, Level::Bottom)?;
        Self::new(vqvae, dsp, top, bottom)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_vqvae(dir, &self.vqvae, &self.dsp)?;
        save_prior(dir, &self.top)?;
        save_prior(dir, &self.bottom)
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        self.vqvae.hierarchy()
    }

    pub fn codebook_size(&self) -> usize {
        self.vqvae.cfg.codebook_size
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.top.meta().vocab
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(&self.top, &self.bottom).expect("checked at construction")
    }

    pub fn codec(&self) -> &MelIFCodec {
        &self.codec
    }

    /// Codemaps of a recording, resampled to the codec rate first.
    pub fn analyze(&self, wave: &Waveform) -> Result<CodemapPair> {
        ensure!(!wave.samples.is_empty(), InvalidInput, "empty recording");
        let wave = if wave.sample_rate == self.dsp.sample_rate {
            wave.clone()
        } else {
            wave.resampled(self.dsp.sample_rate)
        };
        self.vqvae.encode(&self.codec.encode(&wave.samples)?)
    }

    /// Decoded gram and waveform of a codemap pair.
    pub fn render(&self, codes: &CodemapPair) -> Result<(MelIFGram, Waveform)> {
        let gram = self.vqvae.decode(codes)?;
        let samples = self.codec.decode(&gram)?;
        Ok((
            gram,
            Waveform {
                samples,
                sample_rate: self.dsp.sample_rate,
            },
        ))
    }
}
