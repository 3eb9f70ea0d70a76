use serde::{Deserialize, Serialize};

use super::codebook::{perplexity, Codebook};
use super::codes::{CodeGrid, CodemapPair};
use super::loss::masked_recon_loss_var;
use super::net::{VqVaeNet, INPUT_CHANNELS};
use crate::config::VqVaeConfig;
use crate::dsp::{phase_threshold, Grid, MelIFGram};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, ParamBuilder, ParamStore, Scalar, Tape, Tensor, Var};
use crate::rng::SeededRng;

/// Affine map taking log-amplitudes to roughly `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmpNorm {
    pub offset: f64,
    pub scale: f64,
}

impl AmpNorm {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    /// Centre and half-range of the log-amplitudes found in `grams`.
    pub fn fit(grams: &[MelIFGram]) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for g in grams {
            for &v in g.log_amp.as_slice() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        ensure!(lo.is_finite() && hi.is_finite(), InvalidInput, "no finite log-amplitudes to fit");
        let half = ((hi - lo) / 2.0).max(1e-6);
        Ok(Self {
            offset: (hi + lo) / 2.0,
            scale: half,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }
}

/// Network inputs and loss targets for a batch of grams.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[N, 2, F, T]`: normalized log-amplitude, IF.
    pub x: Tensor<T>,
    pub amp: Tensor<T>,
    pub if_norm: Tensor<T>,
    /// 1 where the target log-amplitude is above the floor.
    pub mask: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_grams(grams: &[MelIFGram], norm: &AmpNorm, input_shape: (usize, usize)) -> Result<Self> {
        ensure!(!grams.is_empty(), InvalidInput, "empty batch");
        let (f, t) = input_shape;
        let plane = f * t;
        let n = grams.len();
        let mut x = Vec::with_capacity(n * INPUT_CHANNELS * plane);
        let mut amp = Vec::with_capacity(n * plane);
        let mut ifn = Vec::with_capacity(n * plane);
        let mut mask = Vec::with_capacity(n * plane);
        for g in grams {
            g.check_shape()?;
            ensure!(
                g.shape() == input_shape,
                InvalidInput,
                "gram shape {:?}, model expects {input_shape:?}",
                g.shape()
            );
            let a: Vec<T> = g.log_amp.as_slice().iter().map(|&v| T::lit(norm.apply(v))).collect();
            let i: Vec<T> = g.if_norm.as_slice().iter().map(|&v| T::lit(v)).collect();
            x.extend_from_slice(&a);
            x.extend_from_slice(&i);
            amp.extend_from_slice(&a);
            ifn.extend_from_slice(&i);
            mask.extend(
                g.log_amp
                    .as_slice()
                    .iter()
                    .map(|&v| if v > g.threshold { T::one() } else { T::zero() }),
            );
        }
        Ok(Self {
            x: Tensor::from_vec(&[n, INPUT_CHANNELS, f, t], x)?,
            amp: Tensor::from_vec(&[n, 1, f, t], amp)?,
            if_norm: Tensor::from_vec(&[n, 1, f, t], ifn)?,
            mask: Tensor::from_vec(&[n, 1, f, t], mask)?,
        })
    }
}

/// Quantization of one level during a forward pass.
#[derive(Clone, Debug)]
pub struct QuantState {
    pub indices: Vec<usize>,
    /// Encoder outputs, `N·H·W × D`.
    pub z: Vec<f64>,
    pub z_q: Vec<f64>,
    /// Straight-through offset `z_q − z` added to the encoder output.
    pub delta: Vec<f64>,
    /// `(N, H, W)`.
    pub grid: (usize, usize, usize),
}

pub struct ForwardOut {
    pub recon: Var,
    pub recon_loss: Var,
    pub commit_loss: Var,
    pub loss: Var,
    pub top: QuantState,
    pub bottom: QuantState,
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

fn from_f64<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

/// Straight-through quantization of `z` `[N, D, H, W]`. With `frozen`, the
/// assignment and offset of an earlier pass are reused so the surrogate
/// loss is differentiable in the ordinary sense.
pub fn quantize_st<T: Scalar>(
    t: &mut Tape<'_, T>,
    z: Var,
    cb: &Codebook,
    frozen: Option<&QuantState>,
) -> Result<(Var, Var, QuantState)> {
    let s = t.shape(z).to_vec();
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    ensure!(d == cb.dim(), InvalidInput, "latent dim {d} vs codebook dim {}", cb.dim());
    let rows = t.permute(z, &[0, 2, 3, 1])?;
    let rows = t.reshape(rows, &[n * h * w, d])?;
    let zv = to_f64(t.value(rows).data());
    let state = match frozen {
        Some(f) => QuantState { z: zv, ..f.clone() },
        None => {
            let q = cb.quantize(&zv)?;
            let delta = q.z_q.iter().zip(&zv).map(|(a, b)| a - b).collect();
            QuantState {
                indices: q.indices,
                z: zv,
                z_q: q.z_q,
                delta,
                grid: (n, h, w),
            }
        }
    };
    let delta = t.input(Tensor::from_vec(&[n * h * w, d], from_f64(&state.delta))?)?;
    let q_rows = t.add(rows, delta)?;
    let zq = t.input(Tensor::from_vec(&[n * h * w, d], from_f64(&state.z_q))?)?;
    let diff = t.sub(rows, zq)?;
    let sq = t.mul(diff, diff)?;
    let s = t.sum(sq)?;
    let commit = t.scale(s, 1.0 / (n * h * w).max(1) as f64)?;
    let q = t.reshape(q_rows, &[n, h, w, d])?;
    let q = t.permute(q, &[0, 3, 1, 2])?;
    Ok((q, commit, state))
}

/// Full training forward pass: reconstruction, masked loss and
/// `recon + β·(commit_top + commit_bottom)`.
pub fn forward<T: Scalar>(
    t: &mut Tape<'_, T>,
    net: &VqVaeNet,
    cb_top: &Codebook,
    cb_bottom: &Codebook,
    batch: &Batch<T>,
    beta: f64,
    frozen: Option<(&QuantState, &QuantState)>,
) -> Result<ForwardOut> {
    let x = t.input(batch.x.clone())?;
    let (h_b, z_t) = net.encode_top(t, x)?;
    let (q_t, commit_t, top) = quantize_st(t, z_t, cb_top, frozen.map(|f| f.0))?;
    let z_b = net.encode_bottom(t, q_t, h_b)?;
    let (q_b, commit_b, bottom) = quantize_st(t, z_b, cb_bottom, frozen.map(|f| f.1))?;
    let recon = net.decode(t, q_t, q_b)?;
    let recon_loss = masked_recon_loss_var(t, recon, &batch.amp, &batch.if_norm, &batch.mask)?;
    let commit_loss = t.add(commit_t, commit_b)?;
    let weighted = t.scale(commit_loss, beta)?;
    let loss = t.add(recon_loss, weighted)?;
    Ok(ForwardOut {
        recon,
        recon_loss,
        commit_loss,
        loss,
        top,
        bottom,
    })
}

/// A trained (or freshly initialized) two-level autoencoder.
#[derive(Clone, Debug)]
pub struct VqVae {
    pub cfg: VqVaeConfig,
    pub net: VqVaeNet,
    pub params: ParamStore<f32>,
    pub cb_top: Codebook,
    pub cb_bottom: Codebook,
    pub norm: AmpNorm,
    /// Log-amplitude floor applied to decoded grams.
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: u64,
    pub loss: f64,
    pub recon_loss: f64,
    pub commit_loss: f64,
    pub perplexity_top: f64,
    pub perplexity_bottom: f64,
    pub reseeded: usize,
}

impl VqVae {
    pub fn new(cfg: VqVaeConfig, floor: f64, norm: AmpNorm, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::fork(seed, 0x5651);
        let mut params = ParamStore::new();
        let net = VqVaeNet::new(&mut ParamBuilder::new(&mut params, &mut rng), &cfg)?;
        let cb_top = Codebook::init(cfg.codebook_size, cfg.code_dim, cfg.init_std, cfg.decay, cfg.epsilon, &mut rng)?;
        let cb_bottom =
            Codebook::init(cfg.codebook_size, cfg.code_dim, cfg.init_std, cfg.decay, cfg.epsilon, &mut rng)?;
        Ok(Self {
            cfg,
            net,
            params,
            cb_top,
            cb_bottom,
            norm,
            floor,
        })
    }

    pub fn hierarchy(&self) -> crate::lm::HierarchyConfig {
        self.cfg.hierarchy()
    }

    /// Loss terms of a batch without updating anything, using live quantization.
    pub fn evaluate(&self, grams: &[MelIFGram]) -> Result<(f64, f64)> {
        let batch = Batch::<f32>::from_grams(grams, &self.norm, self.cfg.input_shape)?;
        let mut t = Tape::new(&self.params);
        let out = forward(&mut t, &self.net, &self.cb_top, &self.cb_bottom, &batch, self.cfg.beta, None)?;
        Ok((
            t.value(out.recon_loss).item() as f64,
            t.value(out.commit_loss).item() as f64,
        ))
    }

    pub fn encode(&self, gram: &MelIFGram) -> Result<CodemapPair> {
        Ok(self.encode_batch(std::slice::from_ref(gram))?.remove(0))
    }

    pub fn encode_batch(&self, grams: &[MelIFGram]) -> Result<Vec<CodemapPair>> {
        let batch = Batch::<f32>::from_grams(grams, &self.norm, self.cfg.input_shape)?;
        let mut t = Tape::new(&self.params);
        let x = t.input(batch.x)?;
        let (h_b, z_t) = self.net.encode_top(&mut t, x)?;
        let (top_idx, q_t) = self.quantize_exact(&mut t, z_t, &self.cb_top)?;
        let z_b = self.net.encode_bottom(&mut t, q_t, h_b)?;
        let (bot_idx, _) = self.quantize_exact(&mut t, z_b, &self.cb_bottom)?;
        let (ft, tt) = self.cfg.top_shape();
        let (fb, tb) = self.cfg.bottom_shape();
        let n = grams.len();
        (0..n)
            .map(|i| {
                Ok(CodemapPair {
                    top: CodeGrid::new(ft, tt, top_idx[i * ft * tt..(i + 1) * ft * tt].to_vec())?,
                    bottom: CodeGrid::new(fb, tb, bot_idx[i * fb * tb..(i + 1) * fb * tb].to_vec())?,
                })
            })
            .collect()
    }

    /// Nearest-codeword assignment and the exact codeword tensor `[N, D, H, W]`.
    fn quantize_exact(&self, t: &mut Tape<'_, f32>, z: Var, cb: &Codebook) -> Result<(Vec<usize>, Var)> {
        let s = t.shape(z).to_vec();
        let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
        let rows = t.permute(z, &[0, 2, 3, 1])?;
        let zv = to_f64(t.value(rows).data());
        let q = cb.quantize(&zv)?;
        let q_var = self.codes_to_latent(t, cb, &q.indices, (n, h, w))?;
        debug_assert_eq!(d, cb.dim());
        Ok((q.indices, q_var))
    }

    fn codes_to_latent(
        &self,
        t: &mut Tape<'_, f32>,
        cb: &Codebook,
        indices: &[usize],
        grid: (usize, usize, usize),
    ) -> Result<Var> {
        let (n, h, w) = grid;
        let d = cb.dim();
        let rows = cb.lookup(indices)?;
        let v = t.input(Tensor::from_vec(&[n, h, w, d], from_f64(&rows))?)?;
        t.permute(v, &[0, 3, 1, 2])
    }

    pub fn decode(&self, codes: &CodemapPair) -> Result<MelIFGram> {
        Ok(self.decode_batch(std::slice::from_ref(codes))?.remove(0))
    }

    pub fn decode_batch(&self, codes: &[CodemapPair]) -> Result<Vec<MelIFGram>> {
        ensure!(!codes.is_empty(), InvalidInput, "nothing to decode");
        let hier = self.hierarchy();
        for c in codes {
            c.validate(&hier, self.cfg.codebook_size)?;
        }
        let n = codes.len();
        let (ft, tt) = self.cfg.top_shape();
        let (fb, tb) = self.cfg.bottom_shape();
        let top: Vec<usize> = codes.iter().flat_map(|c| c.top.codes().iter().copied()).collect();
        let bot: Vec<usize> = codes.iter().flat_map(|c| c.bottom.codes().iter().copied()).collect();
        let mut t = Tape::new(&self.params);
        let q_t = self.codes_to_latent(&mut t, &self.cb_top, &top, (n, ft, tt))?;
        let q_b = self.codes_to_latent(&mut t, &self.cb_bottom, &bot, (n, fb, tb))?;
        let out = self.net.decode(&mut t, q_t, q_b)?;
        let (f, tm) = self.cfg.input_shape;
        let plane = f * tm;
        let data = t.value(out).data();
        (0..n)
            .map(|i| {
                let base = i * INPUT_CHANNELS * plane;
                let amp: Vec<f64> = data[base..base + plane]
                    .iter()
                    .map(|&v| self.norm.invert(v as f64))
                    .collect();
                let ifn: Vec<f64> = data[base + plane..base + 2 * plane]
                    .iter()
                    .map(|&v| (v as f64).clamp(-1.0, 1.0))
                    .collect();
                let gram = MelIFGram {
                    log_amp: Grid::from_vec(f, tm, amp)?,
                    if_norm: Grid::from_vec(f, tm, ifn)?,
                    threshold: self.floor,
                };
                Ok(phase_threshold(&gram, self.floor))
            })
            .collect()
    }

    pub fn reconstruct(&self, gram: &MelIFGram) -> Result<MelIFGram> {
        self.decode(&self.encode(gram)?)
    }
}

/// Optimizer state and step counter for training a [`VqVae`].
pub struct VqVaeTrainer {
    adam: Adam<f32>,
    rng: SeededRng,
    step: u64,
}

impl VqVaeTrainer {
    pub fn new(model: &VqVae, seed: u64) -> Self {
        Self {
            adam: Adam::new(model.cfg.adam(), &model.params),
            rng: SeededRng::fork(seed, 0x7472),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam step on `recon + β·commit`, then EMA codebook updates and
    /// dead-code re-seeding. A non-finite loss aborts the step untouched.
    pub fn train_step(&mut self, model: &mut VqVae, grams: &[MelIFGram]) -> Result<TrainMetrics> {
        let batch = Batch::<f32>::from_grams(grams, &model.norm, model.cfg.input_shape)?;
        let (metrics, grads, top, bottom) = {
            let mut t = Tape::new(&model.params);
            let out = forward(&mut t, &model.net, &model.cb_top, &model.cb_bottom, &batch, model.cfg.beta, None)?;
            let loss = t.value(out.loss).item() as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite VQ-VAE loss at step {}", self.step + 1)));
            }
            let grads = t.backward(out.loss)?;
            let k = model.cfg.codebook_size;
            let metrics = TrainMetrics {
                step: self.step + 1,
                loss,
                recon_loss: t.value(out.recon_loss).item() as f64,
                commit_loss: t.value(out.commit_loss).item() as f64,
                perplexity_top: perplexity(&out.top.indices, k)?,
                perplexity_bottom: perplexity(&out.bottom.indices, k)?,
                reseeded: 0,
            };
            (metrics, grads, out.top, out.bottom)
        };
        self.adam.step(&mut model.params, &grads)?;
        self.step += 1;
        model.cb_top.ema_update(&top.z, &top.indices, self.step)?;
        model.cb_bottom.ema_update(&bottom.z, &bottom.indices, self.step)?;
        let patience = model.cfg.dead_code_steps;
        let reseeded = model.cb_top.reseed_dead(&top.z, self.step, patience, &mut self.rng)
            + model.cb_bottom.reseed_dead(&bottom.z, self.step, patience, &mut self.rng);
        Ok(TrainMetrics { reseeded, ..metrics })
    }
}
