use crate::config::SamplerConfig;
use crate::error::{ensure, Result};
use crate::lm::{shift_right, ConditioningLabels, IncrementalDecoder, Level, Prior};
use crate::rng::SeededRng;

/// Keeps the shortest run of most probable entries (ties to the lower
/// index) whose mass reaches `p`, and renormalizes it.
pub fn top_p_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    ensure!(p > 0.0 && p <= 1.0, InvalidConfig, "top_p {p} must lie in (0, 1]");
    ensure!(!probs.is_empty(), InvalidInput, "empty distribution");
    let total: f64 = probs.iter().sum();
    ensure!(
        probs.iter().all(|&x| x >= 0.0 && x.is_finite()) && (total - 1.0).abs() <= 1e-6,
        InvalidInput,
        "probabilities must be non-negative and sum to 1 (sum {total})"
    );
    if p == 1.0 {
        return Ok(probs.to_vec());
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = probs[i];
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    for x in &mut out {
        *x /= mass;
    }
    Ok(out)
}

/// Softmax of `logits / temperature`, computed in `f64`.
pub fn softmax_with_temperature(logits: &[f32], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&x| x as f64 / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Inverse-CDF draw from a normalized distribution.
pub fn sample_token(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Resamples the masked positions of one level in a single left-to-right
/// pass. `context` is the (complete) top sequence when sampling the
/// bottom level.
pub fn sample_level(
    prior: &Prior,
    seq: &[usize],
    mask: &[bool],
    context: Option<&[usize]>,
    labels: ConditioningLabels,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    sample_level_observed(prior, seq, mask, context, labels, cfg, rng, &mut |_, _, _| {})
}

/// [`sample_level`] reporting `(position, filtered distribution, token)`
/// for every sampled position.
#[allow(clippy::too_many_arguments)]
pub fn sample_level_observed(
    prior: &Prior,
    seq: &[usize],
    mask: &[bool],
    context: Option<&[usize]>,
    labels: ConditioningLabels,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
    observe: &mut dyn FnMut(usize, &[f64], usize),
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let meta = prior.meta();
    let n = meta.dec_len();
    ensure!(
        seq.len() == n && mask.len() == n,
        InvalidInput,
        "sequence ({}) and mask ({}) must both have length {n}",
        seq.len(),
        mask.len()
    );
    let start = meta.start();
    let p = match meta.level {
        Level::Top => 1,
        Level::Bottom => meta.hierarchy.patch_area(),
    };
    ensure!(
        mask[..p].iter().all(|&m| !m),
        InvalidInput,
        "START positions cannot be masked"
    );
    let mut out = seq.to_vec();
    if !mask.contains(&true) {
        return Ok(out);
    }
    let dec = match meta.level {
        Level::Top => IncrementalDecoder::top(prior, seq, mask, labels)?,
        Level::Bottom => {
            let top = context.ok_or_else(|| crate::Error::InvalidInput("bottom sampling needs the top sequence".into()))?;
            IncrementalDecoder::bottom(prior, top, labels)?
        }
    };
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let prefix = shift_right(&out[..=i], start);
        let logits = dec.next_logits(&prefix)?;
        let probs = top_p_filter(&softmax_with_temperature(&logits, cfg.temperature), cfg.top_p)?;
        let tok = sample_token(&probs, rng);
        observe(i, &probs, tok);
        out[i] = tok;
    }
    Ok(out)
}
