//! End-to-end training steps shared by the command line and the tests.

use crate::config::RunConfig;
use crate::dataset::{synth_notes, CodemapStore, NoteRecord};
use crate::dsp::{MelIFCodec, MelIFGram};
use crate::error::{ensure, Result};
use crate::lm::{ConditioningLabels, LabelVocab, Level, LmMeta, Prior, PriorExample, PriorMetrics, PriorTrainer};
use crate::rng::SeededRng;
use crate::vqvae::{AmpNorm, TrainMetrics, VqVae, VqVaeTrainer};

/// Synthetic notes described by `cfg.data` at the codec's note length.
pub fn synth_dataset(cfg: &RunConfig) -> Result<Vec<NoteRecord>> {
    let dur = cfg.dsp.note_samples() as f64 / cfg.dsp.sample_rate as f64;
    synth_notes(
        cfg.data.n_notes,
        cfg.data.pitch_min,
        cfg.data.pitch_max,
        dur,
        cfg.dsp.sample_rate,
        cfg.seed,
    )
}

pub fn encode_notes(codec: &MelIFCodec, notes: &[NoteRecord]) -> Result<Vec<MelIFGram>> {
    notes.iter().map(|n| codec.encode(&n.waveform)).collect()
}

/// Yields shuffled minibatch index lists, reshuffling every epoch.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: SeededRng,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        ensure!(n > 0 && batch > 0, InvalidInput, "cannot batch {n} items by {batch}");
        let mut rng = SeededRng::fork(seed, 0x6261);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Ok(Self {
            order,
            pos: 0,
            batch: batch.min(n),
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Fits the amplitude normalization on `grams` and trains for `steps`.
pub fn train_vqvae(
    cfg: &RunConfig,
    grams: &[MelIFGram],
    steps: u64,
    on_step: &mut dyn FnMut(&TrainMetrics),
) -> Result<VqVae> {
    ensure!(!grams.is_empty(), InvalidDataset, "no training grams");
    let norm = AmpNorm::fit(grams)?;
    let mut model = VqVae::new(cfg.vqvae.clone(), cfg.dsp.log_amp_floor, norm, cfg.seed)?;
    let mut trainer = VqVaeTrainer::new(&model, cfg.seed);
    let mut batcher = Batcher::new(grams.len(), cfg.vqvae.batch_size, cfg.seed)?;
    for _ in 0..steps {
        let batch: Vec<MelIFGram> = batcher.next_batch().into_iter().map(|i| grams[i].clone()).collect();
        let m = trainer.train_step(&mut model, &batch)?;
        on_step(&m);
    }
    Ok(model)
}

pub fn prior_meta(cfg: &RunConfig, level: Level, vocab: &LabelVocab) -> LmMeta {
    LmMeta {
        level,
        transformer: cfg.lm.transformer.clone(),
        hierarchy: cfg.vqvae.hierarchy(),
        codebook_size: cfg.vqvae.codebook_size,
        vocab: vocab.clone(),
    }
}

pub fn store_examples(store: &CodemapStore, vocab: &LabelVocab) -> Result<Vec<PriorExample>> {
    store
        .iter()
        .map(|r| {
            Ok(PriorExample {
                labels: ConditioningLabels::new(r.pitch, r.instrument, vocab)?,
                codes: r.codes,
            })
        })
        .collect()
}

pub fn train_prior(
    cfg: &RunConfig,
    level: Level,
    vocab: &LabelVocab,
    examples: &[PriorExample],
    steps: u64,
    on_step: &mut dyn FnMut(&PriorMetrics),
) -> Result<Prior> {
    ensure!(!examples.is_empty(), InvalidDataset, "no training codemaps");
    let seed = cfg.seed ^ (level as u64 + 1);
    let mut prior = Prior::new(prior_meta(cfg, level, vocab), seed)?;
    let mut trainer = PriorTrainer::new(&prior, &cfg.lm, seed)?;
    let mut batcher = Batcher::new(examples.len(), cfg.lm.batch_size, seed)?;
    for _ in 0..steps {
        let batch: Vec<PriorExample> = batcher.next_batch().into_iter().map(|i| examples[i].clone()).collect();
        let m = trainer.train_step(&mut prior, &batch)?;
        on_step(&m);
    }
    Ok(prior)
}

/// Freshly initialized models for every stage, with consistent shapes.
pub fn init_bundle(cfg: &RunConfig, vocab: &LabelVocab) -> Result<crate::bundle::ModelBundle> {
    cfg.validate()?;
    crate::bundle::ModelBundle::new(
        VqVae::new(cfg.vqvae.clone(), cfg.dsp.log_amp_floor, AmpNorm::identity(), cfg.seed)?,
        cfg.dsp.clone(),
        Prior::new(prior_meta(cfg, Level::Top, vocab), cfg.seed ^ 1)?,
        Prior::new(prior_meta(cfg, Level::Bottom, vocab), cfg.seed ^ 2)?,
    )
}
