//! Central finite-difference gradient checks in `f64`.

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::SeededRng;

pub const EPS: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn eval(f: &impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>, store: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new(store);
    let vars = inputs.iter().map(|t| tape.input(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Relative error of the gradient with respect to each input tensor.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<f64>> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let vars = inputs.iter().map(|t| tape.input(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut errs = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        let mut work = inputs.to_vec();
        for (j, num) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + EPS;
            let fp = eval(&f, &store, &work)?;
            work[i].data_mut()[j] = x0 - EPS;
            let fm = eval(&f, &store, &work)?;
            work[i].data_mut()[j] = x0;
            *num = (fp - fm) / (2.0 * EPS);
        }
        errs.push(relative_error(&analytic, &numeric));
    }
    Ok(errs)
}

/// Relative error of the gradient with respect to `ids`, probing at most
/// `max_coords` randomly chosen coordinates per parameter.
pub fn check_params(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    max_coords: usize,
    rng: &mut SeededRng,
    f: impl Fn(&mut Tape<'_, f64>) -> Result<Var>,
) -> Result<f64> {
    let grads = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        tape.backward(out)?
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = store.clone();
    let loss_at = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        Ok(tape.value(out).item())
    };
    for &id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.below(n)).collect()
        };
        for j in coords {
            analytic.push(grads.param(id).map_or(0.0, |g| g.data()[j]));
            let x0 = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = x0 + EPS;
            let fp = loss_at(&work)?;
            work.get_mut(id).data_mut()[j] = x0 - EPS;
            let fm = loss_at(&work)?;
            work.get_mut(id).data_mut()[j] = x0;
            numeric.push((fp - fm) / (2.0 * EPS));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
