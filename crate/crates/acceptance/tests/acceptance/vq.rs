use spectro_core::nn::{ParamStore, Tape, Tensor};
use spectro_core::rng::SeededRng;
use spectro_core::vqvae::{perplexity, quantize_st, Codebook};

use crate::Outcome;

fn brute_nearest(cw: &[f64], d: usize, z: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in cw.chunks(d).enumerate() {
        let s: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

fn quantize_oracle(rng: &mut SeededRng) -> Result<usize, String> {
    let mut vectors = 0;
    for inst in 0..10_000 {
        let (k, d) = (2 + rng.below(30), 1 + rng.below(8));
        let cw: Vec<f64> = (0..k * d).map(|_| rng.normal()).collect();
        let cb = tri!(Codebook::from_codewords(k, d, cw.clone(), 0.99, 1e-5));
        let n = 1 + rng.below(6);
        let z: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let q = tri!(cb.quantize(&z));
        for (i, row) in z.chunks(d).enumerate() {
            let want = brute_nearest(&cw, d, row);
            check!(q.indices[i] == want, "instance {inst}: got code {} want {want}", q.indices[i]);
            check!(q.z_q[i * d..(i + 1) * d] == cw[want * d..(want + 1) * d], "instance {inst}: wrong z_q");
            vectors += 1;
        }
    }
    Ok(vectors)
}

/// Hand-written EMA: N ← γN + (1−γ)n, m ← γm + (1−γ)Σz, e = m / Ñ with
/// Laplace-smoothed counts Ñ.
fn ema_oracle(rng: &mut SeededRng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (k, d) = (2 + rng.below(10), 1 + rng.below(4));
        let (gamma, eps) = (rng.uniform_range(0.5, 0.999), 10f64.powf(rng.uniform_range(-6.0, -2.0)));
        let cw: Vec<f64> = (0..k * d).map(|_| rng.normal()).collect();
        let mut cb = tri!(Codebook::from_codewords(k, d, cw.clone(), gamma, eps));
        let mut counts = vec![1.0; k];
        let mut sums = cw;
        for step in 1..=5u64 {
            let n = 1 + rng.below(12);
            let z: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
            let idx: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            tri!(cb.ema_update(&z, &idx, step));
            for c in 0..k {
                let hits: Vec<usize> = (0..n).filter(|&i| idx[i] == c).collect();
                counts[c] = gamma * counts[c] + (1.0 - gamma) * hits.len() as f64;
                for j in 0..d {
                    let s: f64 = hits.iter().map(|&i| z[i * d + j]).sum();
                    sums[c * d + j] = gamma * sums[c * d + j] + (1.0 - gamma) * s;
                }
            }
            let total: f64 = counts.iter().sum();
            for c in 0..k {
                let smoothed = (counts[c] + eps) / (total + k as f64 * eps) * total;
                worst = worst.max((cb.ema_counts[c] - counts[c]).abs());
                for j in 0..d {
                    worst = worst.max((cb.ema_sums[c * d + j] - sums[c * d + j]).abs());
                    worst = worst.max((cb.codewords[c * d + j] - sums[c * d + j] / smoothed).abs());
                }
            }
            check!(worst <= 1e-9, "EMA state drifted {worst:.2e} from the hand recurrence");
        }
    }
    Ok(worst)
}

fn perplexity_endpoints() -> Result<(), String> {
    for k in [2, 8, 64, 512] {
        for c in [0, k - 1] {
            let p = tri!(perplexity(&vec![c; 3 * k], k));
            check!(p == 1.0, "single-code perplexity {p} for K = {k}");
        }
        let all: Vec<usize> = (0..k).chain(0..k).collect();
        let p = tri!(perplexity(&all, k));
        check!(p == k as f64, "uniform perplexity {p} for K = {k}");
    }
    Ok(())
}

fn straight_through(rng: &mut SeededRng) -> Result<(), String> {
    let (n, d, h, w) = (2, 3, 2, 3);
    let cw: Vec<f64> = (0..6 * d).map(|_| rng.normal()).collect();
    let cb = tri!(Codebook::from_codewords(6, d, cw, 0.99, 1e-5));
    let zdata: Vec<f64> = (0..n * d * h * w).map(|_| rng.normal()).collect();
    let c: Vec<f64> = (0..zdata.len()).map(|_| rng.normal()).collect();
    let store = ParamStore::<f64>::new();
    let mut t = Tape::new(&store);
    let z = tri!(t.input(tri!(Tensor::from_vec(&[n, d, h, w], zdata))));
    let (q, _, state) = tri!(quantize_st(&mut t, z, &cb, None));
    // Forward value is z + (z_q − z), equal to z_q up to rounding.
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (b * h + y) * w + x;
                for ch in 0..d {
                    let got = t.value(q).data()[((b * d + ch) * h + y) * w + x];
                    check!(
                        (got - cb.codeword(state.indices[row])[ch]).abs() <= 1e-12,
                        "forward is not z_q at {row}/{ch}"
                    );
                }
            }
        }
    }
    let cv = tri!(t.input(tri!(Tensor::from_vec(&[n, d, h, w], c.clone()))));
    let prod = tri!(t.mul(q, cv));
    let loss = tri!(t.sum(prod));
    let g = tri!(t.backward(loss));
    check!(g.wrt(z).map(|g| g.data().to_vec()) == Some(c), "∂L/∂z differs from ∂L/∂z_q");
    Ok(())
}

pub fn run() -> Outcome {
    let mut rng = SeededRng::new(300);
    let vectors = quantize_oracle(&mut rng)?;
    let ema = ema_oracle(&mut rng)?;
    perplexity_endpoints()?;
    straight_through(&mut rng)?;
    Ok(format!(
        "nearest neighbour on 10000 instances ({vectors} vectors); EMA max deviation {ema:.1e} ≤ 1e-9; perplexity 1 and K exact; straight-through gradient identical"
    ))
}
