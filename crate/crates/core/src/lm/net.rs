use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ConditioningLabels, HierarchyConfig, LabelVocab};
use crate::config::TransformerConfig;
use crate::error::{ensure, Result};
use crate::nn::{AttentionMask, Embedding, LayerNorm, Linear, ParamBuilder, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Top,
    Bottom,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Top => "top",
            Level::Bottom => "bottom",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Level::Top),
            "bottom" => Ok(Level::Bottom),
            other => Err(crate::Error::InvalidInput(format!("unknown level `{other}` (expected top or bottom)"))),
        }
    }
}

/// Everything needed to rebuild a prior network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmMeta {
    pub level: Level,
    pub transformer: TransformerConfig,
    pub hierarchy: HierarchyConfig,
    pub codebook_size: usize,
    pub vocab: LabelVocab,
}

impl LmMeta {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        self.hierarchy.validate()?;
        ensure!(self.codebook_size >= 2, InvalidConfig, "codebook size must be at least 2");
        LabelVocab::new(self.vocab.families.clone())?;
        Ok(())
    }

    /// Id of the START symbol.
    pub fn start(&self) -> usize {
        self.codebook_size
    }

    pub fn dec_len(&self) -> usize {
        match self.level {
            Level::Top => self.hierarchy.top_len(),
            Level::Bottom => self.hierarchy.bottom_len(),
        }
    }

    pub fn enc_len(&self) -> usize {
        self.hierarchy.top_len()
    }

    /// Positional factor sizes `(a, b)`: time and frequency for the top
    /// level, parent frequency band and within-patch offset for the bottom.
    fn factor_sizes(&self) -> (usize, usize) {
        let h = &self.hierarchy;
        match self.level {
            Level::Top => (h.top_shape.1 + 1, h.top_shape.0 + 1),
            Level::Bottom => (h.top_shape.0 + 1, h.patch_area() + 1),
        }
    }

    /// Positional factor indices of decoder position `i`, derived from the
    /// token predicted at `i`.
    pub fn dec_factors(&self, i: usize) -> Result<(usize, usize)> {
        ensure!(
            i < self.dec_len(),
            InvalidInput,
            "position {i} beyond the {} level length {}",
            self.level,
            self.dec_len()
        );
        let h = &self.hierarchy;
        Ok(match self.level {
            Level::Top if i == 0 => (h.top_shape.1, h.top_shape.0),
            Level::Top => {
                let (f, t) = h.top_cell(i);
                (t, f)
            }
            Level::Bottom => {
                let p = h.patch_area();
                let band = if i < p { h.top_shape.0 } else { h.top_cell(i / p).0 };
                (band, i % p)
            }
        })
    }

    /// Positional factor indices of encoder position `k` (top sequence).
    pub fn enc_factors(&self, k: usize) -> Result<(usize, usize)> {
        ensure!(k < self.enc_len(), InvalidInput, "encoder position {k} out of range");
        let h = &self.hierarchy;
        Ok(match self.level {
            Level::Top => self.dec_factors(k)?,
            Level::Bottom => {
                let band = if k == 0 { h.top_shape.0 } else { h.top_cell(k).0 };
                (band, h.patch_area())
            }
        })
    }
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize) -> Result<Self> {
        let mut pb = pb.sub(name);
        Ok(Self {
            q: Linear::new(&mut pb, "q", d, d)?,
            k: Linear::new(&mut pb, "k", d, d)?,
            v: Linear::new(&mut pb, "v", d, d)?,
            o: Linear::new(&mut pb, "o", d, d)?,
        })
    }

    fn forward<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        xq: Var,
        xkv: Var,
        masks: &[Arc<AttentionMask>],
        heads: usize,
        batch: usize,
    ) -> Result<Var> {
        let q = self.q.forward(t, xq)?;
        let k = self.k.forward(t, xkv)?;
        let v = self.v.forward(t, xkv)?;
        let a = t.attention(q, k, v, masks, heads, batch)?;
        self.o.forward(t, a)
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize, hidden: usize) -> Result<Self> {
        let mut pb = pb.sub(name);
        Ok(Self {
            up: Linear::new(&mut pb, "up", d, hidden)?,
            down: Linear::new(&mut pb, "down", hidden, d)?,
        })
    }

    fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(t, x)?;
        let h = t.relu(h)?;
        self.down.forward(t, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross: Attention,
    ln3: LayerNorm,
    ff: FeedForward,
}

/// One batch of prior inputs. Token vectors are `batch × len`, row-major.
pub struct NetInput<'a> {
    pub batch: usize,
    pub enc_tokens: &'a [usize],
    pub dec_tokens: &'a [usize],
    pub labels: &'a [ConditioningLabels],
    /// One encoder mask shared by the batch or one per element.
    pub enc_masks: &'a [Arc<AttentionMask>],
    pub dec_mask: &'a Arc<AttentionMask>,
    pub cross_mask: &'a Arc<AttentionMask>,
}

/// Parameter handles of a pre-LN encoder-decoder Transformer whose input
/// embedding is the concatenation of token, two positional factors, pitch
/// and instrument embeddings.
#[derive(Clone, Debug)]
pub struct PriorNet {
    pub meta: LmMeta,
    tok: Embedding,
    pos_a: Embedding,
    pos_b: Embedding,
    pitch: Embedding,
    instrument: Embedding,
    enc: Vec<EncoderLayer>,
    enc_ln: LayerNorm,
    dec: Vec<DecoderLayer>,
    dec_ln: LayerNorm,
    head: Linear,
}

impl PriorNet {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, meta: LmMeta) -> Result<Self> {
        meta.validate()?;
        let c = meta.transformer.clone();
        let d = c.model_dim;
        let (na, nb) = meta.factor_sizes();
        let mut emb = pb.sub("embed");
        let tok = Embedding::new(&mut emb, "token", meta.codebook_size + 1, c.token_embed_dim)?;
        let pos_a = Embedding::new(&mut emb, "pos_a", na, c.pos_embed_dim)?;
        let pos_b = Embedding::new(&mut emb, "pos_b", nb, c.pos_embed_dim)?;
        let pitch = Embedding::new(&mut emb, "pitch", meta.vocab.n_pitches(), c.label_embed_dim)?;
        let instrument = Embedding::new(&mut emb, "instrument", meta.vocab.families.len(), c.label_embed_dim)?;
        let mut enc = Vec::with_capacity(c.n_layers_enc);
        for l in 0..c.n_layers_enc {
            let mut pb = pb.sub(&format!("enc.{l}"));
            enc.push(EncoderLayer {
                ln1: LayerNorm::new(&mut pb, "ln1", d)?,
                attn: Attention::new(&mut pb, "attn", d)?,
                ln2: LayerNorm::new(&mut pb, "ln2", d)?,
                ff: FeedForward::new(&mut pb, "ff", d, c.ffn_dim)?,
            });
        }
        let enc_ln = LayerNorm::new(pb, "enc_ln", d)?;
        let mut dec = Vec::with_capacity(c.n_layers_dec);
        for l in 0..c.n_layers_dec {
            let mut pb = pb.sub(&format!("dec.{l}"));
            dec.push(DecoderLayer {
                ln1: LayerNorm::new(&mut pb, "ln1", d)?,
                self_attn: Attention::new(&mut pb, "self_attn", d)?,
                ln2: LayerNorm::new(&mut pb, "ln2", d)?,
                cross: Attention::new(&mut pb, "cross", d)?,
                ln3: LayerNorm::new(&mut pb, "ln3", d)?,
                ff: FeedForward::new(&mut pb, "ff", d, c.ffn_dim)?,
            });
        }
        let dec_ln = LayerNorm::new(pb, "dec_ln", d)?;
        let head = Linear::new(pb, "head", d, meta.codebook_size)?;
        Ok(Self {
            meta,
            tok,
            pos_a,
            pos_b,
            pitch,
            instrument,
            enc,
            enc_ln,
            dec,
            dec_ln,
            head,
        })
    }

    fn embed<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        tokens: &[usize],
        factors: &[(usize, usize)],
        labels: &[ConditioningLabels],
    ) -> Result<Var> {
        let len = factors.len();
        let batch = labels.len();
        ensure!(
            tokens.len() == batch * len,
            InvalidInput,
            "{} tokens for batch {batch} × length {len}",
            tokens.len()
        );
        if let Some(bad) = tokens.iter().find(|&&x| x > self.meta.codebook_size) {
            return Err(crate::Error::InvalidInput(format!(
                "token {bad} out of range for K = {}",
                self.meta.codebook_size
            )));
        }
        for l in labels {
            ensure!(
                (l.instrument() as usize) < self.meta.vocab.families.len(),
                InvalidInput,
                "instrument {} unknown to this model",
                l.instrument()
            );
        }
        let a: Vec<usize> = (0..batch).flat_map(|_| factors.iter().map(|f| f.0)).collect();
        let b: Vec<usize> = (0..batch).flat_map(|_| factors.iter().map(|f| f.1)).collect();
        let p: Vec<usize> = labels.iter().flat_map(|l| std::iter::repeat_n(l.pitch_index(), len)).collect();
        let ins: Vec<usize> = labels
            .iter()
            .flat_map(|l| std::iter::repeat_n(l.instrument() as usize, len))
            .collect();
        let parts = [
            self.tok.forward(t, tokens)?,
            self.pos_a.forward(t, &a)?,
            self.pos_b.forward(t, &b)?,
            self.pitch.forward(t, &p)?,
            self.instrument.forward(t, &ins)?,
        ];
        t.concat(&parts, 1)
    }

    /// Encoder output `[B·Le, D]`.
    pub fn encode<T: Scalar>(&self, t: &mut Tape<'_, T>, inp: &NetInput<'_>) -> Result<Var> {
        let factors = (0..self.meta.enc_len())
            .map(|k| self.meta.enc_factors(k))
            .collect::<Result<Vec<_>>>()?;
        let heads = self.meta.transformer.n_heads;
        let mut x = self.embed(t, inp.enc_tokens, &factors, inp.labels)?;
        for layer in &self.enc {
            let h = layer.ln1.forward(t, x)?;
            let a = layer.attn.forward(t, h, h, inp.enc_masks, heads, inp.batch)?;
            x = t.add(x, a)?;
            let h = layer.ln2.forward(t, x)?;
            let f = layer.ff.forward(t, h)?;
            x = t.add(x, f)?;
        }
        self.enc_ln.forward(t, x)
    }

    /// Logits `[B·L, K]` for the first `L = dec_tokens.len() / B` decoder
    /// positions, given encoder output `memory`.
    pub fn decode<T: Scalar>(&self, t: &mut Tape<'_, T>, memory: Var, inp: &NetInput<'_>) -> Result<Var> {
        let len = inp.dec_tokens.len() / inp.batch.max(1);
        ensure!(
            len >= 1 && len <= self.meta.dec_len(),
            InvalidInput,
            "decoder length {len} outside 1..={}",
            self.meta.dec_len()
        );
        let factors = (0..len).map(|i| self.meta.dec_factors(i)).collect::<Result<Vec<_>>>()?;
        let heads = self.meta.transformer.n_heads;
        let dec_mask = [inp.dec_mask.clone()];
        let cross_mask = [inp.cross_mask.clone()];
        let mut x = self.embed(t, inp.dec_tokens, &factors, inp.labels)?;
        for layer in &self.dec {
            let h = layer.ln1.forward(t, x)?;
            let a = layer.self_attn.forward(t, h, h, &dec_mask, heads, inp.batch)?;
            x = t.add(x, a)?;
            let h = layer.ln2.forward(t, x)?;
            let c = layer.cross.forward(t, h, memory, &cross_mask, heads, inp.batch)?;
            x = t.add(x, c)?;
            let h = layer.ln3.forward(t, x)?;
            let f = layer.ff.forward(t, h)?;
            x = t.add(x, f)?;
        }
        let x = self.dec_ln.forward(t, x)?;
        self.head.forward(t, x)
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, inp: &NetInput<'_>) -> Result<Var> {
        let memory = self.encode(t, inp)?;
        self.decode(t, memory, inp)
    }

    /// Positional part (both factors) of the decoder input embedding at `i`.
    pub fn positional_embedding<T: Scalar>(&self, store: &crate::nn::ParamStore<T>, i: usize) -> Result<Vec<f64>> {
        let (a, b) = self.meta.dec_factors(i)?;
        let d = self.meta.transformer.pos_embed_dim;
        let ta = store.get(self.pos_a.table).to_f64_vec();
        let tb = store.get(self.pos_b.table).to_f64_vec();
        Ok(ta[a * d..(a + 1) * d].iter().chain(&tb[b * d..(b + 1) * d]).copied().collect())
    }
}
