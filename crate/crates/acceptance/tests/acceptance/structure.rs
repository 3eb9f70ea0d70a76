//! Attention-mask structure as bit-exact perturbation invariances, plus
//! exhaustive linearization checks.

use spectro_core::config::TransformerConfig;
use spectro_core::lm::{
    bottom_logits, bottom_masks, delinearize_bottom, delinearize_top, linearize_bottom, linearize_top, parent_index,
    top_logits, ConditioningLabels, HierarchyConfig, LabelVocab, Level, LmMeta, NetInput, Prior,
};
use spectro_core::nn::{ParamStore, Tape, Tensor};
use spectro_core::rng::SeededRng;
use spectro_core::vqvae::CodeGrid;

use crate::Outcome;

const K: usize = 8;

fn prior(level: Level, h: HierarchyConfig, seed: u64) -> Result<Prior, String> {
    let meta = LmMeta {
        level,
        transformer: TransformerConfig {
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 2,
            model_dim: 32,
            token_embed_dim: 16,
            pos_embed_dim: 4,
            label_embed_dim: 4,
            ffn_dim: 32,
        },
        hierarchy: h,
        codebook_size: K,
        vocab: LabelVocab::synthetic(),
    };
    Ok(tri!(Prior::new(meta, seed)))
}

fn labels() -> ConditioningLabels {
    ConditioningLabels::new(60, 1, &LabelVocab::synthetic()).unwrap()
}

fn top_rows(p: &Prior, seq: &[usize], m: &[bool]) -> Vec<f32> {
    let mut t = Tape::new(&p.params);
    let out = top_logits(&mut t, &p.net, &[seq], &[m], &[labels()]).unwrap();
    t.value(out).data().to_vec()
}

fn bottom_rows(p: &Prior, b: &[usize], top: &[usize], isolate: bool) -> Vec<f32> {
    let mut t = Tape::new(&p.params);
    let out = bottom_logits(&mut t, &p.net, &[b], &[top], &[labels()], isolate).unwrap();
    t.value(out).data().to_vec()
}

/// Bottom-model encoder memory `[Lt, D]` over a top sequence.
fn bottom_memory(p: &Prior, top: &[usize]) -> Vec<f32> {
    let m = bottom_masks(&p.meta().hierarchy, false);
    let dec = vec![p.meta().start()];
    let mut t = Tape::new(&p.params);
    let inp = NetInput {
        batch: 1,
        enc_tokens: top,
        dec_tokens: &dec,
        labels: &[labels()],
        enc_masks: std::slice::from_ref(&m.encoder),
        dec_mask: &m.decoder,
        cross_mask: &m.cross,
    };
    let mem = p.net.encode(&mut t, &inp).unwrap();
    t.value(mem).data().to_vec()
}

fn row(v: &[f32], i: usize) -> &[f32] {
    &v[i * K..(i + 1) * K]
}

fn seq(rng: &mut SeededRng, n: usize, starts: usize) -> Vec<usize> {
    (0..n).map(|i| if i < starts { K } else { rng.below(K) }).collect()
}

fn bump(rng: &mut SeededRng, x: usize) -> usize {
    (x + 1 + rng.below(K - 1)) % K
}

/// Top decoder: row i never depends on masked tokens at positions ≥ i.
fn top_causality(rng: &mut SeededRng, h: HierarchyConfig) -> Result<usize, String> {
    let p = prior(Level::Top, h, 1)?;
    let n = h.top_len();
    let mut probes = 0;
    for _ in 0..10 {
        let s = seq(rng, n, 1);
        let m: Vec<bool> = (0..n).map(|i| i > 0 && rng.bernoulli(0.6)).collect();
        let base = top_rows(&p, &s, &m);
        for j in (1..n).filter(|&j| m[j]) {
            let mut alt = s.clone();
            alt[j] = bump(rng, alt[j]);
            let out = top_rows(&p, &alt, &m);
            for i in 0..=j {
                check!(row(&base, i) == row(&out, i), "top row {i} moved after editing masked token {j}");
                probes += 1;
            }
            if j + 1 < n {
                check!(row(&base, j + 1) != row(&out, j + 1), "top row {} blind to token {j}", j + 1);
            }
        }
    }
    Ok(probes)
}

/// Bottom decoder causal, bottom encoder anti-causal over the top sequence.
fn bottom_structure(rng: &mut SeededRng, h: HierarchyConfig) -> Result<usize, String> {
    let p = prior(Level::Bottom, h, 2)?;
    let (nb, nt, pa) = (h.bottom_len(), h.top_len(), h.patch_area());
    let mut probes = 0;
    for _ in 0..4 {
        let b = seq(rng, nb, pa);
        let top = seq(rng, nt, 1);
        let base = bottom_rows(&p, &b, &top, false);
        for j in pa..nb {
            let mut alt = b.clone();
            alt[j] = bump(rng, alt[j]);
            let out = bottom_rows(&p, &alt, &top, false);
            for i in 0..=j {
                check!(row(&base, i) == row(&out, i), "bottom row {i} moved after editing bottom token {j}");
                probes += 1;
            }
        }
        // Encoder memory at parent q reads top tokens ≥ q only.
        let d = p.meta().transformer.model_dim;
        let mem = bottom_memory(&p, &top);
        for k in 1..nt {
            let mut alt = top.clone();
            alt[k] = bump(rng, alt[k]);
            let out = bottom_memory(&p, &alt);
            for q in 0..nt {
                let same = mem[q * d..(q + 1) * d] == out[q * d..(q + 1) * d];
                check!(same == (q > k), "encoder slot {q} after editing top token {k}: unchanged = {same}");
                probes += 1;
            }
            let logits = bottom_rows(&p, &b, &alt, false);
            check!(row(&base, k * pa) != row(&logits, k * pa), "parent edit {k} invisible to its patch");
        }
        // Isolated model: a top edit reaches exactly its own patch.
        let base = bottom_rows(&p, &b, &top, true);
        for k in 1..nt {
            let mut alt = top.clone();
            alt[k] = bump(rng, alt[k]);
            let out = bottom_rows(&p, &b, &alt, true);
            for i in 0..nb {
                check!(
                    (row(&base, i) == row(&out, i)) == (i / pa != k),
                    "isolated row {i} after editing top token {k}"
                );
                probes += 1;
            }
        }
    }
    Ok(probes)
}

fn cross_attention_is_diagonal(rng: &mut SeededRng, h: HierarchyConfig) -> Result<(), String> {
    let m = bottom_masks(&h, false);
    let (nb, nt, pa) = (h.bottom_len(), h.top_len(), h.patch_area());
    let store = ParamStore::<f64>::new();
    let mut t = Tape::new(&store);
    let d = 8;
    let q = tri!(t.input(tri!(Tensor::from_vec(&[nb, d], (0..nb * d).map(|_| rng.normal()).collect()))));
    let kv = tri!(t.input(tri!(Tensor::from_vec(&[nt, d], (0..nt * d).map(|_| rng.normal()).collect()))));
    let out = tri!(t.attention(q, kv, kv, &[m.cross.clone()], 2, 1));
    let w = t.attention_weights(out).ok_or("attention output carries no weights")?;
    for hd in 0..2 {
        for i in 0..nb {
            for k in 0..nt {
                let v = w[(hd * nb + i) * nt + k];
                if k == i / pa {
                    check!((v - 1.0).abs() < 1e-12, "parent weight {v} at ({i}, {k})");
                } else {
                    check!(v == 0.0, "weight {v} outside the parent column at ({i}, {k})");
                }
            }
        }
    }
    Ok(())
}

/// Every top shape up to 8×8 with every patch up to 2×2.
fn linearization_exhaustive() -> Result<usize, String> {
    let mut shapes = 0;
    for tf in 1..=8 {
        for tt in 1..=8 {
            for df in 1..=2 {
                for dt in 1..=2 {
                    let h = tri!(HierarchyConfig::new((tf, tt), (df, dt)));
                    let (bf, bt) = h.bottom_shape();
                    let start = bf * bt;
                    let top = tri!(CodeGrid::new(tf, tt, (0..tf * tt).collect()));
                    let bottom = tri!(CodeGrid::new(bf, bt, (0..bf * bt).collect()));

                    let ts = linearize_top(&top, start);
                    check!(ts.len() == h.top_len() && ts.tokens[0] == start, "top layout {tf}x{tt}");
                    check!(tri!(delinearize_top(&ts, h.top_shape)) == top, "top round trip {tf}x{tt}");
                    let mut seen = vec![false; tf * tt];
                    for (i, o) in ts.origin.iter().enumerate().skip(1) {
                        let (r, c) = o.ok_or("missing top origin")?;
                        check!(ts.tokens[i] == r * tt + c && !seen[r * tt + c], "top position {i}");
                        seen[r * tt + c] = true;
                        // Time-major order: frames advance slowest.
                        check!(i - 1 == c * tf + r, "top position {i} is not column-major");
                    }
                    check!(seen.iter().all(|&s| s), "top cell missed for {tf}x{tt}");

                    let bs = tri!(linearize_bottom(&bottom, &h, start));
                    check!(bs.len() == h.bottom_len(), "bottom length {tf}x{tt}/{df}x{dt}");
                    check!(tri!(delinearize_bottom(&bs, &h)) == bottom, "bottom round trip {tf}x{tt}/{df}x{dt}");
                    let mut seen = vec![false; bf * bt];
                    let mut children = vec![0usize; h.top_len()];
                    for i in 0..h.bottom_len() {
                        let parent = tri!(parent_index(i, &h));
                        check!(parent == i / h.patch_area(), "parent_index({i})");
                        children[parent] += 1;
                        if i < h.patch_area() {
                            check!(bs.tokens[i] == start && bs.origin[i].is_none(), "bottom START {i}");
                            continue;
                        }
                        let (r, c) = bs.origin[i].ok_or("missing bottom origin")?;
                        check!(bs.tokens[i] == r * bt + c && !seen[r * bt + c], "bottom position {i}");
                        seen[r * bt + c] = true;
                        let (pr, pc) = ts.origin[parent].ok_or("parent is START")?;
                        check!(
                            (r / df, c / dt) == (pr, pc),
                            "bottom cell ({r},{c}) outside parent ({pr},{pc}) for {tf}x{tt}/{df}x{dt}"
                        );
                    }
                    check!(seen.iter().all(|&s| s), "bottom cell missed for {tf}x{tt}/{df}x{dt}");
                    check!(children.iter().all(|&c| c == h.patch_area()), "uneven patches {tf}x{tt}/{df}x{dt}");
                    check!(parent_index(h.bottom_len(), &h).is_err(), "parent_index past the end accepted");
                    shapes += 1;
                }
            }
        }
    }
    Ok(shapes)
}

pub fn run() -> Outcome {
    let mut rng = SeededRng::new(400);
    let mut probes = 0;
    for h in [tri!(HierarchyConfig::new((4, 2), (2, 2))), tri!(HierarchyConfig::new((3, 3), (1, 2)))] {
        probes += top_causality(&mut rng, h)?;
        probes += bottom_structure(&mut rng, h)?;
        cross_attention_is_diagonal(&mut rng, h)?;
    }
    let shapes = linearization_exhaustive()?;
    Ok(format!(
        "{probes} bit-exact invariance probes (top/bottom decoder causal, bottom encoder anti-causal, isolated patches); \
         cross-attention exactly 0 off parent; {shapes} hierarchy shapes linearized and parent-indexed exhaustively"
    ))
}
