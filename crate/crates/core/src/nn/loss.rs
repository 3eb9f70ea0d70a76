use super::Scalar;

/// Target distribution with `1 - mass` on `target` and `mass / (K - 1)`
/// on every other class.
pub fn label_smoothed_targets(target: usize, k: usize, mass: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let other = mass / (k - 1) as f64;
    (0..k).map(|c| if c == target { 1.0 - mass } else { other }).collect()
}

/// Mean label-smoothed cross-entropy over rows with a target.
/// Returns `(loss, softmax probabilities)`.
pub(crate) fn cross_entropy_forward<T: Scalar>(
    logits: &[T],
    k: usize,
    targets: &[Option<usize>],
    mass: T,
) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    let mut count = 0usize;
    let off = if k > 1 { mass / T::lit((k - 1) as f64) } else { T::zero() };
    for (r, t) in targets.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        for (p, &x) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
            *p = (x - lse).exp();
        }
        if let Some(t) = *t {
            count += 1;
            for (c, &x) in row.iter().enumerate() {
                let q = if c == t { T::one() - mass } else { off };
                total = total - q * (x - lse);
            }
        }
    }
    let loss = if count == 0 { T::zero() } else { total / T::lit(count as f64) };
    (loss, probs)
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    probs: &[T],
    k: usize,
    targets: &[Option<usize>],
    mass: T,
    upstream: T,
) -> Vec<T> {
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = vec![T::zero(); probs.len()];
    if count == 0 {
        return grad;
    }
    let scale = upstream / T::lit(count as f64);
    let off = if k > 1 { mass / T::lit((k - 1) as f64) } else { T::zero() };
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        for c in 0..k {
            let q = if c == t { T::one() - mass } else { off };
            grad[r * k + c] = (probs[r * k + c] - q) * scale;
        }
    }
    grad
}
