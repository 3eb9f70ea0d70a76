//! Convolutional encoder/decoder stacks of the two-level autoencoder.
//!
//! Bottom encoder: strided convs (kernel 4, stride 2 on each axis still to
//! be reduced, kernel 3 stride 1 otherwise) → 3×3 conv → residual blocks.
//! The top encoder repeats the pattern on the bottom features. The bottom
//! quantizer sees `concat(dec_t(q_t), h_b)`; the decoder sees
//! `concat(upsample_t(q_t), q_b)`.

use crate::config::VqVaeConfig;
use crate::error::Result;
use crate::nn::{Conv2d, ConvGeom, ConvTranspose2d, ParamBuilder, Scalar, Tape, Var};

/// Per-stage strides reducing an axis ratio pair to 1, largest first.
pub(crate) fn stage_strides(ratio: (usize, usize)) -> Vec<(usize, usize)> {
    let lf = ratio.0.trailing_zeros() as usize;
    let lt = ratio.1.trailing_zeros() as usize;
    (0..lf.max(lt))
        .map(|i| (if i < lf { 2 } else { 1 }, if i < lt { 2 } else { 1 }))
        .collect()
}

fn stage_kernel(stride: (usize, usize)) -> (usize, usize) {
    (if stride.0 == 2 { 4 } else { 3 }, if stride.1 == 2 { 4 } else { 3 })
}

fn stage_geom(stride: (usize, usize)) -> ConvGeom {
    ConvGeom::new(stride, (1, 1))
}

fn same3() -> ConvGeom {
    ConvGeom::new((1, 1), (1, 1))
}

fn pointwise() -> ConvGeom {
    ConvGeom::new((1, 1), (0, 0))
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv3: Conv2d,
    conv1: Conv2d,
}

impl ResBlock {
    fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Result<Self> {
        let mut pb = pb.sub(name);
        Ok(Self {
            conv3: Conv2d::new(&mut pb, "conv3", c, c, (3, 3), same3())?,
            conv1: Conv2d::new(&mut pb, "conv1", c, c, (1, 1), pointwise())?,
        })
    }

    fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = t.relu(x)?;
        let h = self.conv3.forward(t, h)?;
        let h = t.relu(h)?;
        let h = self.conv1.forward(t, h)?;
        t.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    stages: Vec<Conv2d>,
    conv: Conv2d,
    res: Vec<ResBlock>,
}

impl Encoder {
    fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c: usize,
        ratio: (usize, usize),
        n_res: usize,
    ) -> Result<Self> {
        let mut pb = pb.sub(name);
        let mut stages = Vec::new();
        for (i, s) in stage_strides(ratio).into_iter().enumerate() {
            let cin = if i == 0 { c_in } else { c };
            stages.push(Conv2d::new(&mut pb, &format!("down{i}"), cin, c, stage_kernel(s), stage_geom(s))?);
        }
        let conv_in = if stages.is_empty() { c_in } else { c };
        Ok(Self {
            stages,
            conv: Conv2d::new(&mut pb, "conv", conv_in, c, (3, 3), same3())?,
            res: (0..n_res)
                .map(|i| ResBlock::new(&mut pb, &format!("res{i}"), c))
                .collect::<Result<_>>()?,
        })
    }

    fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, mut x: Var) -> Result<Var> {
        for s in &self.stages {
            x = s.forward(t, x)?;
            x = t.relu(x)?;
        }
        x = self.conv.forward(t, x)?;
        for r in &self.res {
            x = r.forward(t, x)?;
        }
        t.relu(x)
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    conv: Conv2d,
    res: Vec<ResBlock>,
    stages: Vec<ConvTranspose2d>,
    /// Output projection used when there is no upsampling stage.
    out: Option<Conv2d>,
}

impl Decoder {
    fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c: usize,
        c_out: usize,
        ratio: (usize, usize),
        n_res: usize,
    ) -> Result<Self> {
        let mut pb = pb.sub(name);
        let conv = Conv2d::new(&mut pb, "conv", c_in, c, (3, 3), same3())?;
        let res = (0..n_res)
            .map(|i| ResBlock::new(&mut pb, &format!("res{i}"), c))
            .collect::<Result<_>>()?;
        let strides = stage_strides(ratio);
        let n = strides.len();
        let mut stages = Vec::new();
        for (i, s) in strides.into_iter().enumerate() {
            let cout = if i + 1 == n { c_out } else { c };
            stages.push(ConvTranspose2d::new(&mut pb, &format!("up{i}"), c, cout, stage_kernel(s), stage_geom(s))?);
        }
        let out = if n == 0 {
            Some(Conv2d::new(&mut pb, "out", c, c_out, (1, 1), pointwise())?)
        } else {
            None
        };
        Ok(Self { conv, res, stages, out })
    }

    fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut x = self.conv.forward(t, x)?;
        for r in &self.res {
            x = r.forward(t, x)?;
        }
        x = t.relu(x)?;
        for (i, s) in self.stages.iter().enumerate() {
            x = s.forward(t, x)?;
            if i + 1 < self.stages.len() {
                x = t.relu(x)?;
            }
        }
        if let Some(out) = &self.out {
            x = out.forward(t, x)?;
        }
        Ok(x)
    }
}

/// Upsampling path from top codes to bottom resolution for the decoder.
#[derive(Clone, Debug)]
struct Upsampler {
    stages: Vec<ConvTranspose2d>,
}

impl Upsampler {
    fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize, ratio: (usize, usize)) -> Result<Self> {
        let mut pb = pb.sub(name);
        let stages = stage_strides(ratio)
            .into_iter()
            .enumerate()
            .map(|(i, s)| ConvTranspose2d::new(&mut pb, &format!("up{i}"), d, d, stage_kernel(s), stage_geom(s)))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, mut x: Var) -> Result<Var> {
        for (i, s) in self.stages.iter().enumerate() {
            x = s.forward(t, x)?;
            if i + 1 < self.stages.len() {
                x = t.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Parameter handles of the full network. The same handles index a
/// `ParamStore<f32>` for training or its `f64` cast for gradient checks.
#[derive(Clone, Debug)]
pub struct VqVaeNet {
    enc_b: Encoder,
    enc_t: Encoder,
    pre_q_t: Conv2d,
    dec_t: Decoder,
    pre_q_b: Conv2d,
    up_t: Upsampler,
    dec: Decoder,
}

pub const INPUT_CHANNELS: usize = 2;

impl VqVaeNet {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &VqVaeConfig) -> Result<Self> {
        let (c, d, r) = (cfg.channels, cfg.code_dim, cfg.res_blocks);
        Ok(Self {
            enc_b: Encoder::new(pb, "enc_b", INPUT_CHANNELS, c, cfg.bottom_downsample, r)?,
            enc_t: Encoder::new(pb, "enc_t", c, c, cfg.top_downsample, r)?,
            pre_q_t: Conv2d::new(pb, "pre_q_t", c, d, (1, 1), pointwise())?,
            dec_t: Decoder::new(pb, "dec_t", d, c, d, cfg.top_downsample, r)?,
            pre_q_b: Conv2d::new(pb, "pre_q_b", d + c, d, (1, 1), pointwise())?,
            up_t: Upsampler::new(pb, "up_t", d, cfg.top_downsample)?,
            dec: Decoder::new(pb, "dec", 2 * d, c, INPUT_CHANNELS, cfg.bottom_downsample, r)?,
        })
    }

    /// `x` `[N, 2, F, T]` → bottom features `h_b` and top latents `z_t`.
    pub fn encode_top<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var)> {
        let h_b = self.enc_b.forward(t, x)?;
        let h_t = self.enc_t.forward(t, h_b)?;
        let z_t = self.pre_q_t.forward(t, h_t)?;
        Ok((h_b, z_t))
    }

    /// Bottom latents `z_b` from the quantized top `q_t` and `h_b`.
    pub fn encode_bottom<T: Scalar>(&self, t: &mut Tape<'_, T>, q_t: Var, h_b: Var) -> Result<Var> {
        let d_t = self.dec_t.forward(t, q_t)?;
        let cat = t.concat(&[d_t, h_b], 1)?;
        self.pre_q_b.forward(t, cat)
    }

    /// Reconstruction `[N, 2, F, T]` from quantized latents.
    pub fn decode<T: Scalar>(&self, t: &mut Tape<'_, T>, q_t: Var, q_b: Var) -> Result<Var> {
        let up = self.up_t.forward(t, q_t)?;
        let cat = t.concat(&[up, q_b], 1)?;
        self.dec.forward(t, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_cover_ratios() {
        assert_eq!(stage_strides((8, 8)), vec![(2, 2); 3]);
        assert_eq!(stage_strides((16, 4)), vec![(2, 2), (2, 2), (2, 1), (2, 1)]);
        assert_eq!(stage_strides((1, 1)), vec![]);
        assert_eq!(stage_strides((1, 2)), vec![(1, 2)]);
    }
}
