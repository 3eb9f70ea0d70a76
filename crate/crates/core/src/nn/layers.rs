use super::{ConvGeom, ParamBuilder, ParamId, Scalar, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let mut pb = pb.sub(name);
        Ok(Self {
            w: pb.uniform("w", &[d_in, d_out], d_in)?,
            b: pb.uniform("b", &[d_out], d_in)?,
            d_in,
            d_out,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: pb.uniform(name, &[vocab, dim], dim)?,
            vocab,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, idx: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.embedding(t, idx)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut pb = pb.sub(name);
        Ok(Self {
            gain: pb.constant("g", &[dim], 1.0)?,
            bias: pb.constant("b", &[dim], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
    ) -> Result<Self> {
        let mut pb = pb.sub(name);
        let fan_in = c_in * kernel.0 * kernel.1;
        Ok(Self {
            w: pb.uniform("w", &[c_out, c_in, kernel.0, kernel.1], fan_in)?,
            b: pb.uniform("b", &[c_out], fan_in)?,
            geom,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv2d(x, w, Some(b), self.geom)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
    ) -> Result<Self> {
        let mut pb = pb.sub(name);
        // Each output pixel sums roughly c_in·kh·kw/(sh·sw) terms.
        let fan_in = (c_in * kernel.0 * kernel.1 / (geom.stride.0 * geom.stride.1)).max(1);
        Ok(Self {
            w: pb.uniform("w", &[c_in, c_out, kernel.0, kernel.1], fan_in)?,
            b: pb.uniform("b", &[c_out], fan_in)?,
            geom,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv_transpose2d(x, w, Some(b), self.geom)
    }
}
