use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::masks::{bottom_masks, top_masks};
use super::net::{Level, LmMeta, NetInput, PriorNet};
use super::{linearize_bottom, linearize_top, ConditioningLabels, LinearSeq};
use crate::config::LmConfig;
use crate::error::{ensure, Error, Result};
use crate::nn::{clip_grad_norm, Adam, AttentionMask, ParamBuilder, ParamStore, Scalar, Tape, Var};
use crate::rng::SeededRng;
use crate::vqvae::CodemapPair;

/// Decoder input for target `seq`: START followed by `seq[..n-1]`, so the
/// output at position `i` predicts `seq[i]`.
pub fn shift_right(seq: &[usize], start: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len());
    out.push(start);
    out.extend_from_slice(&seq[..seq.len().saturating_sub(1)]);
    out
}

/// Encoder source for the top model: positions scheduled for inpainting
/// are replaced by START placeholders.
pub fn masked_source(seq: &[usize], m: &[bool], start: usize) -> Vec<usize> {
    seq.iter().zip(m).map(|(&x, &hide)| if hide { start } else { x }).collect()
}

/// One training example for either prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorExample {
    pub codes: CodemapPair,
    pub labels: ConditioningLabels,
}

/// Top-model logits `[B·L, K]` for target sequences `seqs` under
/// linearized inpainting masks `masks`.
pub fn top_logits<T: Scalar>(
    t: &mut Tape<'_, T>,
    net: &PriorNet,
    seqs: &[&[usize]],
    masks: &[&[bool]],
    labels: &[ConditioningLabels],
) -> Result<Var> {
    let meta = &net.meta;
    ensure!(meta.level == Level::Top, InvalidInput, "top_logits on a {} model", meta.level);
    ensure!(
        seqs.len() == masks.len() && seqs.len() == labels.len() && !seqs.is_empty(),
        InvalidInput,
        "batch of {} sequences, {} masks, {} labels",
        seqs.len(),
        masks.len(),
        labels.len()
    );
    let n = meta.dec_len();
    let start = meta.start();
    let mut enc_tokens = Vec::with_capacity(seqs.len() * n);
    let mut dec_tokens = Vec::with_capacity(seqs.len() * n);
    let mut enc_masks = Vec::with_capacity(seqs.len());
    let mut shared = None;
    for (s, m) in seqs.iter().zip(masks) {
        ensure!(s.len() == n, InvalidInput, "top sequence of length {}, expected {n}", s.len());
        let lm = top_masks(m, n)?;
        enc_tokens.extend(masked_source(s, m, start));
        dec_tokens.extend(shift_right(s, start));
        enc_masks.push(lm.encoder);
        shared.get_or_insert((lm.decoder, lm.cross));
    }
    let (dec_mask, cross_mask) = shared.expect("non-empty batch");
    net.forward(
        t,
        &NetInput {
            batch: seqs.len(),
            enc_tokens: &enc_tokens,
            dec_tokens: &dec_tokens,
            labels,
            enc_masks: &enc_masks,
            dec_mask: &dec_mask,
            cross_mask: &cross_mask,
        },
    )
}

/// Bottom-model logits `[B·L, K]` for bottom sequences conditioned on the
/// aligned top sequences.
pub fn bottom_logits<T: Scalar>(
    t: &mut Tape<'_, T>,
    net: &PriorNet,
    bottoms: &[&[usize]],
    tops: &[&[usize]],
    labels: &[ConditioningLabels],
    isolate: bool,
) -> Result<Var> {
    let meta = &net.meta;
    ensure!(meta.level == Level::Bottom, InvalidInput, "bottom_logits on a {} model", meta.level);
    ensure!(
        bottoms.len() == tops.len() && bottoms.len() == labels.len() && !bottoms.is_empty(),
        InvalidInput,
        "batch of {} bottom and {} top sequences, {} labels",
        bottoms.len(),
        tops.len(),
        labels.len()
    );
    let (nb, nt) = (meta.dec_len(), meta.enc_len());
    let start = meta.start();
    let mut enc_tokens = Vec::with_capacity(tops.len() * nt);
    let mut dec_tokens = Vec::with_capacity(bottoms.len() * nb);
    for (b, top) in bottoms.iter().zip(tops) {
        ensure!(
            b.len() == nb && top.len() == nt,
            InvalidInput,
            "bottom length {} must be P × top length ({} × {nt})",
            b.len(),
            meta.hierarchy.patch_area()
        );
        enc_tokens.extend_from_slice(top);
        dec_tokens.extend(shift_right(b, start));
    }
    let m = bottom_masks(&meta.hierarchy, isolate);
    net.forward(
        t,
        &NetInput {
            batch: bottoms.len(),
            enc_tokens: &enc_tokens,
            dec_tokens: &dec_tokens,
            labels,
            enc_masks: std::slice::from_ref(&m.encoder),
            dec_mask: &m.decoder,
            cross_mask: &m.cross,
        },
    )
}

/// Per-batch masking probability drawn uniformly from `[lo, hi]`, then one
/// Bernoulli draw per real token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSampler {
    pub lo: f64,
    pub hi: f64,
}

impl MaskSampler {
    pub fn new(range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        ensure!(
            (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            InvalidConfig,
            "mask probability range {range:?} must be an ordered sub-range of [0, 1]"
        );
        Ok(Self { lo, hi })
    }

    pub fn draw_prob(&self, rng: &mut SeededRng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform_range(self.lo, self.hi)
        }
    }

    /// Linearized top mask of length `n`; position 0 (START) is never masked.
    pub fn sample(&self, rng: &mut SeededRng, p: f64, n: usize) -> Vec<bool> {
        (0..n).map(|i| i > 0 && rng.bernoulli(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorMetrics {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    pub mask_prob: Option<f64>,
    pub scored: usize,
}

/// A prior network with its `f32` parameters.
#[derive(Clone, Debug)]
pub struct Prior {
    pub net: PriorNet,
    pub params: ParamStore<f32>,
}

struct Prepared {
    seqs: Vec<Vec<usize>>,
    aux: Vec<Vec<usize>>,
    labels: Vec<ConditioningLabels>,
}

impl Prior {
    pub fn new(meta: LmMeta, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::fork(seed, 0x6c6d);
        let mut params = ParamStore::new();
        let net = PriorNet::new(&mut ParamBuilder::new(&mut params, &mut rng), meta)?;
        Ok(Self { net, params })
    }

    pub fn meta(&self) -> &LmMeta {
        &self.net.meta
    }

    pub fn level(&self) -> Level {
        self.net.meta.level
    }

    /// Linearized target sequences (and top conditioning for the bottom level).
    fn prepare(&self, examples: &[PriorExample]) -> Result<Prepared> {
        let meta = self.meta();
        let start = meta.start();
        let mut seqs = Vec::with_capacity(examples.len());
        let mut aux = Vec::with_capacity(examples.len());
        for ex in examples {
            ex.codes.validate(&meta.hierarchy, meta.codebook_size)?;
            let top = linearize_top(&ex.codes.top, start);
            match meta.level {
                Level::Top => seqs.push(top.tokens),
                Level::Bottom => {
                    let b: LinearSeq = linearize_bottom(&ex.codes.bottom, &meta.hierarchy, start)?;
                    seqs.push(b.tokens);
                    aux.push(top.tokens);
                }
            }
        }
        Ok(Prepared {
            seqs,
            aux,
            labels: examples.iter().map(|e| e.labels).collect(),
        })
    }

    /// Logits and per-row targets for a batch. `masks` applies to the top
    /// level only; the bottom level scores every non-START position.
    fn logits_and_targets<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        prep: &Prepared,
        masks: Option<&[Vec<bool>]>,
    ) -> Result<(Var, Vec<Option<usize>>)> {
        let seqs: Vec<&[usize]> = prep.seqs.iter().map(|s| s.as_slice()).collect();
        match self.level() {
            Level::Top => {
                let masks = masks.ok_or_else(|| Error::InvalidInput("top level needs inpainting masks".into()))?;
                let mrefs: Vec<&[bool]> = masks.iter().map(|m| m.as_slice()).collect();
                let logits = top_logits(t, &self.net, &seqs, &mrefs, &prep.labels)?;
                let targets = seqs
                    .iter()
                    .zip(masks)
                    .flat_map(|(s, m)| s.iter().zip(m).map(|(&x, &hide)| hide.then_some(x)))
                    .collect();
                Ok((logits, targets))
            }
            Level::Bottom => {
                let tops: Vec<&[usize]> = prep.aux.iter().map(|s| s.as_slice()).collect();
                let logits = bottom_logits(t, &self.net, &seqs, &tops, &prep.labels, false)?;
                let p = self.meta().hierarchy.patch_area();
                let targets = seqs
                    .iter()
                    .flat_map(|s| s.iter().enumerate().map(move |(i, &x)| (i >= p).then_some(x)))
                    .collect();
                Ok((logits, targets))
            }
        }
    }

    /// Mean negative log-likelihood in nats per scored token: every top
    /// token masked (generation from scratch), every bottom token.
    pub fn eval_nll(&self, examples: &[PriorExample]) -> Result<f64> {
        ensure!(!examples.is_empty(), InvalidInput, "no examples to evaluate");
        let prep = self.prepare(examples)?;
        let n = self.meta().dec_len();
        let masks: Vec<Vec<bool>> = prep.seqs.iter().map(|_| (0..n).map(|i| i > 0).collect()).collect();
        let mut t = Tape::new(&self.params);
        let (logits, targets) = self.logits_and_targets(&mut t, &prep, Some(&masks))?;
        let loss = t.cross_entropy(logits, &targets, 0.0)?;
        Ok(t.value(loss).item() as f64)
    }
}

/// Adam state, mask sampler and step counter for training one [`Prior`].
pub struct PriorTrainer {
    adam: Adam<f32>,
    rng: SeededRng,
    sampler: MaskSampler,
    smoothing: f64,
    clip: f64,
    step: u64,
}

impl PriorTrainer {
    pub fn new(prior: &Prior, cfg: &LmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            adam: Adam::new(cfg.adam(), &prior.params),
            rng: SeededRng::fork(seed, 0x7074),
            sampler: MaskSampler::new(cfg.mask_prob_range)?,
            smoothing: cfg.label_smoothing,
            clip: cfg.grad_clip,
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One step: label-smoothed cross-entropy, global-norm clipping, Adam.
    pub fn train_step(&mut self, prior: &mut Prior, examples: &[PriorExample]) -> Result<PriorMetrics> {
        ensure!(!examples.is_empty(), InvalidInput, "empty training batch");
        let prep = prior.prepare(examples)?;
        let (masks, mask_prob) = match prior.level() {
            Level::Top => {
                let n = prior.meta().dec_len();
                let p = self.sampler.draw_prob(&mut self.rng);
                let mut masks: Vec<Vec<bool>> = (0..prep.seqs.len()).map(|_| self.sampler.sample(&mut self.rng, p, n)).collect();
                // Unmasked tokens are visible to the encoder, so an empty
                // mask leaves nothing to learn from.
                if masks.iter().all(|m| !m.contains(&true)) && n > 1 {
                    let i = 1 + self.rng.below(n - 1);
                    masks[0][i] = true;
                }
                (Some(masks), Some(p))
            }
            Level::Bottom => (None, None),
        };
        let (metrics, mut grads) = {
            let mut t = Tape::new(&prior.params);
            let (logits, targets) = prior.logits_and_targets(&mut t, &prep, masks.as_deref())?;
            let loss = t.cross_entropy(logits, &targets, self.smoothing)?;
            let lv = t.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("non-finite prior loss at step {}", self.step + 1)));
            }
            let k = prior.meta().codebook_size;
            let lg = t.value(logits).data();
            let mut hits = 0;
            let mut scored = 0;
            for (row, target) in targets.iter().enumerate() {
                if let Some(y) = target {
                    scored += 1;
                    let r = &lg[row * k..(row + 1) * k];
                    let arg = (0..k).fold(0, |b, j| if r[j] > r[b] { j } else { b });
                    hits += usize::from(arg == *y);
                }
            }
            let grads = t.backward(loss)?;
            (
                PriorMetrics {
                    step: self.step + 1,
                    loss: lv,
                    accuracy: hits as f64 / scored.max(1) as f64,
                    grad_norm: 0.0,
                    mask_prob,
                    scored,
                },
                grads,
            )
        };
        let norm = clip_grad_norm(&mut grads, self.clip);
        self.adam.step(&mut prior.params, &grads)?;
        self.step += 1;
        Ok(PriorMetrics {
            grad_norm: norm,
            ..metrics
        })
    }
}

/// Runs the encoder once and exposes next-token logits position by
/// position, for left-to-right sampling.
pub struct IncrementalDecoder<'a> {
    prior: &'a Prior,
    memory: crate::nn::Tensor<f32>,
    labels: ConditioningLabels,
    enc_mask: Arc<AttentionMask>,
}

impl<'a> IncrementalDecoder<'a> {
    /// Top level: the encoder sees `seq` with the `m`-positions hidden.
    pub fn top(prior: &'a Prior, seq: &[usize], m: &[bool], labels: ConditioningLabels) -> Result<Self> {
        ensure!(prior.level() == Level::Top, InvalidInput, "top decoder on a {} model", prior.level());
        let meta = prior.meta();
        let n = meta.dec_len();
        ensure!(seq.len() == n && m.len() == n, InvalidInput, "top sequence/mask length must be {n}");
        let masks = top_masks(m, n)?;
        let src = masked_source(seq, m, meta.start());
        Self::build(prior, &src, masks.encoder, labels)
    }

    /// Bottom level conditioned on a complete top sequence.
    pub fn bottom(prior: &'a Prior, top: &[usize], labels: ConditioningLabels) -> Result<Self> {
        ensure!(prior.level() == Level::Bottom, InvalidInput, "bottom decoder on a {} model", prior.level());
        let meta = prior.meta();
        ensure!(top.len() == meta.enc_len(), InvalidInput, "top sequence length must be {}", meta.enc_len());
        let masks = bottom_masks(&meta.hierarchy, false);
        Self::build(prior, top, masks.encoder, labels)
    }

    fn build(prior: &'a Prior, src: &[usize], enc_mask: Arc<AttentionMask>, labels: ConditioningLabels) -> Result<Self> {
        let meta = prior.meta();
        let mut t = Tape::new(&prior.params);
        let one = [labels];
        let dummy = [meta.start()];
        let dec_mask = Arc::new(AttentionMask::causal(1));
        let cross = Arc::new(AttentionMask::full(1, meta.enc_len()));
        let mem = prior.net.encode(
            &mut t,
            &NetInput {
                batch: 1,
                enc_tokens: src,
                dec_tokens: &dummy,
                labels: &one,
                enc_masks: std::slice::from_ref(&enc_mask),
                dec_mask: &dec_mask,
                cross_mask: &cross,
            },
        )?;
        Ok(Self {
            prior,
            memory: t.value(mem).clone(),
            labels,
            enc_mask,
        })
    }

    /// Logits (length K) predicting position `prefix.len() - 1` of the
    /// target, where `prefix` is the shifted decoder input so far.
    pub fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f32>> {
        let meta = self.prior.meta();
        let len = prefix.len();
        ensure!(len >= 1 && len <= meta.dec_len(), InvalidInput, "decoder prefix of length {len}");
        let mut t = Tape::new(&self.prior.params);
        let memory = t.input(self.memory.clone())?;
        let dec_mask = Arc::new(AttentionMask::causal(len));
        let cross = Arc::new(match meta.level {
            Level::Top => AttentionMask::full(len, meta.enc_len()),
            Level::Bottom => {
                let p = meta.hierarchy.patch_area();
                AttentionMask::from_fn(len, meta.enc_len(), |i, k| k == i / p)
            }
        });
        let one = [self.labels];
        let logits = self.prior.net.decode(
            &mut t,
            memory,
            &NetInput {
                batch: 1,
                enc_tokens: &[],
                dec_tokens: prefix,
                labels: &one,
                enc_masks: std::slice::from_ref(&self.enc_mask),
                dec_mask: &dec_mask,
                cross_mask: &cross,
            },
        )?;
        let k = meta.codebook_size;
        Ok(t.value(logits).data()[(len - 1) * k..len * k].to_vec())
    }
}
