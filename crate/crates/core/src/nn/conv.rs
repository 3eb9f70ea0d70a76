//! im2col-based 2-D convolution kernels over `[N, C, H, W]` tensors.

use super::scalar::matmul_into;
use super::Scalar;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }

    pub fn conv_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let (h, w) = input;
        let (kh, kw) = kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        ensure!(sh > 0 && sw > 0, InvalidConfig, "convolution stride must be positive");
        ensure!(
            h + 2 * ph >= kh && w + 2 * pw >= kw,
            InvalidShape,
            "kernel {kernel:?} larger than padded input {input:?}"
        );
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    pub fn transpose_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let (h, w) = input;
        let (kh, kw) = kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        ensure!(sh > 0 && sw > 0, InvalidConfig, "convolution stride must be positive");
        let oh = ((h - 1) * sh + kh).checked_sub(2 * ph);
        let ow = ((w - 1) * sw + kw).checked_sub(2 * pw);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(crate::Error::InvalidShape(format!(
                "transposed convolution of {input:?} with kernel {kernel:?} has empty output"
            ))),
        }
    }
}

pub(crate) struct Plan {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeom,
}

impl Plan {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// `x` is one `[C, H, W]` image; `cols` becomes `[C·kh·kw, oh·ow]`.
fn im2col<T: Scalar>(p: &Plan, x: &[T], cols: &mut [T]) {
    let (sh, sw) = p.geom.stride;
    let (ph, pw) = p.geom.padding;
    let n_cols = p.cols();
    for c in 0..p.c {
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (c * p.kh + ky) * p.kw + kx;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..p.oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    for ox in 0..p.ow {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        dst[oy * p.ow + ox] = if iy >= 0 && (iy as usize) < p.h && ix >= 0 && (ix as usize) < p.w {
                            x[(c * p.h + iy as usize) * p.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `[C, H, W]`.
fn col2im<T: Scalar>(p: &Plan, cols: &[T], x: &mut [T]) {
    let (sh, sw) = p.geom.stride;
    let (ph, pw) = p.geom.padding;
    let n_cols = p.cols();
    for c in 0..p.c {
        for ky in 0..p.kh {
            for kx in 0..p.kw {
                let row = (c * p.kh + ky) * p.kw + kx;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..p.oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy as usize >= p.h {
                        continue;
                    }
                    for ox in 0..p.ow {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix < 0 || ix as usize >= p.w {
                            continue;
                        }
                        let i = (c * p.h + iy as usize) * p.w + ix as usize;
                        x[i] = x[i] + src[oy * p.ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution. `w` is `[O, C, kh, kw]`; returns `[N, O, oh, ow]`.
pub(crate) fn conv2d_forward<T: Scalar>(p: &Plan, n: usize, o: usize, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * p.cols()];
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    let in_sz = p.c * p.h * p.w;
    let out_sz = o * p.cols();
    for i in 0..n {
        im2col(p, &x[i * in_sz..(i + 1) * in_sz], &mut cols);
        let dst = &mut out[i * out_sz..(i + 1) * out_sz];
        matmul_into(o, p.rows(), p.cols(), w, false, &cols, false, dst, false);
        if let Some(b) = b {
            for (oc, &bias) in b.iter().enumerate() {
                for v in &mut dst[oc * p.cols()..(oc + 1) * p.cols()] {
                    *v = *v + bias;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, db)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    p: &Plan,
    n: usize,
    o: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let in_sz = p.c * p.h * p.w;
    let out_sz = o * p.cols();
    let mut dx = vec![T::zero(); n * in_sz];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); o];
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    let mut dcols = vec![T::zero(); p.rows() * p.cols()];
    for i in 0..n {
        let g = &dout[i * out_sz..(i + 1) * out_sz];
        im2col(p, &x[i * in_sz..(i + 1) * in_sz], &mut cols);
        matmul_into(o, p.cols(), p.rows(), g, false, &cols, true, &mut dw, true);
        matmul_into(p.rows(), o, p.cols(), w, true, g, false, &mut dcols, false);
        col2im(p, &dcols, &mut dx[i * in_sz..(i + 1) * in_sz]);
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc = *acc + g[oc * p.cols()..(oc + 1) * p.cols()].iter().copied().sum::<T>();
        }
    }
    (dx, dw, db)
}

/// Transposed convolution. `p` describes the *adjoint* convolution, i.e.
/// from the `[Cout, OH, OW]` output back to the `[Cin, H, W]` input, so
/// `p.c = Cout`, `(p.h, p.w) = (OH, OW)`, `(p.oh, p.ow) = (H, W)`.
/// `w` is `[Cin, Cout, kh, kw]`.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    p: &Plan,
    n: usize,
    cin: usize,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    let in_sz = cin * p.cols();
    let out_plane = p.h * p.w;
    let out_sz = p.c * out_plane;
    let mut out = vec![T::zero(); n * out_sz];
    let mut cols = vec![T::zero(); p.rows() * p.cols()];
    for i in 0..n {
        matmul_into(p.rows(), cin, p.cols(), w, true, &x[i * in_sz..(i + 1) * in_sz], false, &mut cols, false);
        let dst = &mut out[i * out_sz..(i + 1) * out_sz];
        col2im(p, &cols, dst);
        if let Some(b) = b {
            for (oc, &bias) in b.iter().enumerate() {
                for v in &mut dst[oc * out_plane..(oc + 1) * out_plane] {
                    *v = *v + bias;
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    p: &Plan,
    n: usize,
    cin: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let in_sz = cin * p.cols();
    let out_plane = p.h * p.w;
    let out_sz = p.c * out_plane;
    let mut dx = vec![T::zero(); n * in_sz];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); p.c];
    let mut gcols = vec![T::zero(); p.rows() * p.cols()];
    for i in 0..n {
        let g = &dout[i * out_sz..(i + 1) * out_sz];
        im2col(p, g, &mut gcols);
        matmul_into(cin, p.rows(), p.cols(), w, false, &gcols, false, &mut dx[i * in_sz..(i + 1) * in_sz], false);
        matmul_into(cin, p.cols(), p.rows(), &x[i * in_sz..(i + 1) * in_sz], false, &gcols, true, &mut dw, true);
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc = *acc + g[oc * out_plane..(oc + 1) * out_plane].iter().copied().sum::<T>();
        }
    }
    (dx, dw, db)
}
