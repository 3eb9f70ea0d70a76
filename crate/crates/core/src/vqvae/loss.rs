use crate::dsp::MelIFGram;
use crate::error::{ensure, Result};
use crate::nn::{Scalar, Tape, Tensor, Var};

/// Phase-masked L2 between two grams, per cell: squared log-amplitude
/// error everywhere plus squared IF error where the target lies above its
/// floor, divided by the number of cells.
pub fn masked_recon_loss(pred: &MelIFGram, target: &MelIFGram) -> Result<f64> {
    pred.check_shape()?;
    target.check_shape()?;
    ensure!(
        pred.shape() == target.shape(),
        InvalidShape,
        "prediction {:?} vs target {:?}",
        pred.shape(),
        target.shape()
    );
    let floor = target.threshold;
    let mut total = 0.0;
    let cells = pred.log_amp.as_slice().len();
    for i in 0..cells {
        let da = pred.log_amp.as_slice()[i] - target.log_amp.as_slice()[i];
        total += da * da;
        if target.log_amp.as_slice()[i] > floor {
            let di = pred.if_norm.as_slice()[i] - target.if_norm.as_slice()[i];
            total += di * di;
        }
    }
    Ok(total / cells.max(1) as f64)
}

/// Tape version over `[N, 2, F, T]` predictions. `mask` holds 1 where the
/// IF term counts and 0 elsewhere; gradients at masked-out IF cells are
/// exactly zero.
pub fn masked_recon_loss_var<T: Scalar>(
    t: &mut Tape<'_, T>,
    pred: Var,
    target_amp: &Tensor<T>,
    target_if: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Var> {
    let amp = t.slice(pred, 1, 0, 1)?;
    let ifp = t.slice(pred, 1, 1, 1)?;
    let ta = t.input(target_amp.clone())?;
    let ti = t.input(target_if.clone())?;
    let m = t.input(mask.clone())?;
    let da = t.sub(amp, ta)?;
    let a2 = t.mul(da, da)?;
    let sa = t.sum(a2)?;
    let di = t.sub(ifp, ti)?;
    let dm = t.mul(di, m)?;
    let i2 = t.mul(dm, dm)?;
    let si = t.sum(i2)?;
    let total = t.add(sa, si)?;
    let cells = target_amp.numel().max(1);
    t.scale(total, 1.0 / cells as f64)
}
