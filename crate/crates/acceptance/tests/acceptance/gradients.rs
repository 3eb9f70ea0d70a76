//! Every tape op and both composed losses against central differences.

use std::sync::Arc;

use spectro_core::config::{TransformerConfig, VqVaeConfig};
use spectro_core::dsp::{phase_threshold, Grid, MelIFGram};
use spectro_core::lm::{bottom_logits, top_logits, ConditioningLabels, HierarchyConfig, LabelVocab, Level, LmMeta, Prior};
use spectro_core::nn::gradcheck::{check_inputs, check_params};
use spectro_core::nn::{AttentionMask, ConvGeom, LayerNorm, Linear, ParamBuilder, ParamStore, Tape, Tensor, Var};
use spectro_core::rng::SeededRng;
use spectro_core::vqvae::{forward, AmpNorm, Batch, Codebook, VqVae};
use spectro_core::Result;

use crate::Outcome;

const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;

fn rand(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn probe(t: &mut Tape<'_, f64>, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = t.input(Tensor::from_vec(&shape, (0..n).map(|i| ((i as f64 + 1.0) * 0.7311).sin()).collect())?)?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

struct Ops {
    rng: SeededRng,
    worst: (f64, String),
    count: usize,
}

impl Ops {
    fn check(
        &mut self,
        name: &str,
        shapes: &[&[usize]],
        f: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
    ) -> std::result::Result<(), String> {
        let inputs: Vec<_> = shapes.iter().map(|s| rand(&mut self.rng, s)).collect();
        self.check_with(name, inputs, f)
    }

    fn check_with(
        &mut self,
        name: &str,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
    ) -> std::result::Result<(), String> {
        let errs = check_inputs(&inputs, |t, v| {
            let y = f(t, v)?;
            probe(t, y)
        })
        .map_err(|e| format!("{name}: {e}"))?;
        self.count += 1;
        for e in errs {
            if e > self.worst.0 {
                self.worst = (e, name.to_string());
            }
            check!(e <= OP_TOL, "{name}: relative error {e:.2e} > {OP_TOL:e}");
        }
        Ok(())
    }
}

fn ops() -> std::result::Result<(usize, f64, String), String> {
    let mut o = Ops {
        rng: SeededRng::new(100),
        worst: (0.0, String::new()),
        count: 0,
    };
    o.check("add", &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]))?;
    o.check("sub", &[&[3, 4], &[3, 4]], |t, v| t.sub(v[0], v[1]))?;
    o.check("mul", &[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]))?;
    o.check("add_bias", &[&[2, 3, 4], &[4]], |t, v| t.add_bias(v[0], v[1]))?;
    o.check("scale", &[&[3, 4]], |t, v| t.scale(v[0], -1.7))?;
    let mut rng = SeededRng::new(101);
    let away_from_kink: Vec<f64> = (0..12)
        .map(|_| {
            let x: f64 = rng.uniform_range(0.1, 1.0);
            if rng.bernoulli(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    o.check_with("relu", vec![Tensor::from_vec(&[3, 4], away_from_kink).unwrap()], |t, v| t.relu(v[0]))?;
    o.check("sum", &[&[3, 4]], |t, v| t.sum(v[0]))?;
    o.check("mean", &[&[3, 4]], |t, v| t.mean(v[0]))?;
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a: &[usize] = if ta { &[4, 3] } else { &[3, 4] };
        let b: &[usize] = if tb { &[5, 4] } else { &[4, 5] };
        o.check("matmul_t", &[a, b], move |t, v| t.matmul_t(v[0], v[1], ta, tb))?;
    }
    o.check("matmul", &[&[2, 3], &[3, 2]], |t, v| t.matmul(v[0], v[1]))?;
    o.check("linear", &[&[2, 3, 4], &[4, 5], &[5]], |t, v| t.linear(v[0], v[1], Some(v[2])))?;
    o.check("linear (no bias)", &[&[3, 4], &[4, 2]], |t, v| t.linear(v[0], v[1], None))?;
    o.check("reshape", &[&[2, 3, 4]], |t, v| t.reshape(v[0], &[4, 6]))?;
    o.check("permute", &[&[2, 3, 4]], |t, v| t.permute(v[0], &[1, 2, 0]))?;
    o.check("concat", &[&[2, 3, 4], &[2, 1, 4]], |t, v| t.concat(&[v[0], v[1]], 1))?;
    o.check("slice", &[&[2, 5, 3]], |t, v| t.slice(v[0], 1, 1, 3))?;
    for axis in 0..3 {
        o.check("softmax", &[&[3, 4, 2]], move |t, v| t.softmax(v[0], axis))?;
    }
    o.check("layer_norm", &[&[4, 6], &[6], &[6]], |t, v| t.layer_norm(v[0], v[1], v[2]))?;
    o.check("embedding", &[&[5, 3]], |t, v| t.embedding(v[0], &[4, 0, 4, 1, 2]))?;
    for (k, geom) in [
        ((4, 4), ConvGeom::new((2, 2), (1, 1))),
        ((3, 3), ConvGeom::new((1, 1), (1, 1))),
        ((4, 3), ConvGeom::new((2, 1), (1, 1))),
        ((1, 1), ConvGeom::new((1, 1), (0, 0))),
    ] {
        o.check("conv2d", &[&[2, 3, 6, 4], &[2, 3, k.0, k.1], &[2]], move |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), geom)
        })?;
        o.check("conv_transpose2d", &[&[2, 3, 3, 2], &[3, 2, k.0, k.1], &[2]], move |t, v| {
            t.conv_transpose2d(v[0], v[1], Some(v[2]), geom)
        })?;
    }
    let (b, lq, lk) = (2, 4, 3);
    let masks = [
        Arc::new(AttentionMask::full(lq, lk)),
        Arc::new(AttentionMask::from_fn(lq, lk, |i, j| j <= i)),
        Arc::new(AttentionMask::from_fn(lq, lk, |i, j| j >= i.min(lk - 1))),
    ];
    for m in &masks {
        let m = m.clone();
        o.check("attention", &[&[b * lq, 6], &[b * lk, 6], &[b * lk, 6]], move |t, v| {
            t.attention(v[0], v[1], v[2], &[m.clone(), m.clone()], 2, b)
        })?;
    }
    for smoothing in [0.0, 0.1] {
        o.check("cross_entropy", &[&[4, 5]], move |t, v| {
            t.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)], smoothing)
        })?;
    }

    // detach is exact: no gradient flows through it.
    let store = ParamStore::<f64>::new();
    let mut t = Tape::new(&store);
    let x = t.input(rand(&mut o.rng, &[3])).unwrap();
    let d = t.detach(x).unwrap();
    let y = t.mul(d, x).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    check!(
        g.wrt(x).unwrap().data() == t.value(x).data(),
        "detach leaked gradient"
    );
    o.count += 1;

    // Parameter path through the layer wrappers.
    let mut store = ParamStore::<f64>::new();
    let mut rng = SeededRng::new(102);
    let (lin, ln) = {
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        (Linear::new(&mut pb, "lin", 4, 3).unwrap(), LayerNorm::new(&mut pb, "ln", 3).unwrap())
    };
    let xin = rand(&mut o.rng, &[5, 4]);
    let ids: Vec<_> = store.ids().collect();
    let e = check_params(&store, &ids, 64, &mut rng, |t| {
        let x = t.input(xin.clone())?;
        let h = lin.forward(t, x)?;
        let h = ln.forward(t, h)?;
        probe(t, h)
    })
    .map_err(|e| e.to_string())?;
    check!(e <= OP_TOL, "parameter path: relative error {e:.2e}");
    o.count += 1;
    Ok((o.count, o.worst.0, o.worst.1))
}

fn vq_end_to_end() -> std::result::Result<f64, String> {
    let cfg = VqVaeConfig {
        input_shape: (16, 8),
        bottom_downsample: (2, 2),
        top_downsample: (2, 2),
        codebook_size: 8,
        code_dim: 3,
        channels: 4,
        res_blocks: 1,
        ..VqVaeConfig::default()
    };
    let mut rng = SeededRng::new(103);
    let grams: Vec<MelIFGram> = (0..2)
        .map(|_| {
            let g = MelIFGram {
                log_amp: Grid::from_fn(16, 8, |_, _| rng.uniform_range(-9.0, 0.0)),
                if_norm: Grid::from_fn(16, 8, |_, _| rng.uniform_range(-1.0, 1.0)),
                threshold: -8.0,
            };
            phase_threshold(&g, -8.0)
        })
        .collect();
    let mut model = tri!(VqVae::new(cfg.clone(), -8.0, tri!(AmpNorm::fit(&grams)), 3));
    for cb in [&mut model.cb_top, &mut model.cb_bottom] {
        let cw: Vec<f64> = (0..cb.codewords.len()).map(|_| 0.3 * rng.normal()).collect();
        *cb = tri!(Codebook::from_codewords(cb.size(), cb.dim(), cw, 0.99, 1e-5));
    }
    let store = model.params.cast::<f64>();
    let batch = tri!(Batch::<f64>::from_grams(&grams, &model.norm, cfg.input_shape));
    let (top, bottom) = {
        let mut t = Tape::new(&store);
        let out = tri!(forward(&mut t, &model.net, &model.cb_top, &model.cb_bottom, &batch, cfg.beta, None));
        (out.top, out.bottom)
    };
    let ids: Vec<_> = store.ids().collect();
    let e = tri!(check_params(&store, &ids, 3, &mut rng, |t| {
        let out = forward(t, &model.net, &model.cb_top, &model.cb_bottom, &batch, cfg.beta, Some((&top, &bottom)))?;
        Ok(out.loss)
    }));
    check!(e <= E2E_TOL, "VQ-VAE loss: relative error {e:.2e}");
    Ok(e)
}

fn transformer_end_to_end() -> std::result::Result<f64, String> {
    let h = tri!(HierarchyConfig::new((4, 2), (2, 2)));
    let k = 8;
    let mut rng = SeededRng::new(104);
    let mut worst: f64 = 0.0;
    for level in [Level::Top, Level::Bottom] {
        let meta = LmMeta {
            level,
            transformer: TransformerConfig {
                n_layers_enc: 1,
                n_layers_dec: 1,
                n_heads: 2,
                model_dim: 16,
                token_embed_dim: 8,
                pos_embed_dim: 2,
                label_embed_dim: 2,
                ffn_dim: 16,
            },
            hierarchy: h,
            codebook_size: k,
            vocab: LabelVocab::synthetic(),
        };
        let prior = tri!(Prior::new(meta, 105));
        let store: ParamStore<f64> = prior.params.cast();
        let top: Vec<usize> = (0..h.top_len()).map(|i| if i == 0 { k } else { rng.below(k) }).collect();
        let bottom: Vec<usize> =
            (0..h.bottom_len()).map(|i| if i < h.patch_area() { k } else { rng.below(k) }).collect();
        let m: Vec<bool> = (0..h.top_len()).map(|i| i > 0 && rng.bernoulli(0.7)).collect();
        let labels = [tri!(ConditioningLabels::new(57, 2, &LabelVocab::synthetic()))];
        let ids: Vec<_> = store.ids().collect();
        let e = tri!(check_params(&store, &ids, 4, &mut rng, |t| {
            let (logits, targets): (Var, Vec<Option<usize>>) = match level {
                Level::Top => (
                    top_logits(t, &prior.net, &[&top], &[&m], &labels)?,
                    top.iter().zip(&m).map(|(&x, &hide)| hide.then_some(x)).collect(),
                ),
                Level::Bottom => (
                    bottom_logits(t, &prior.net, &[&bottom], &[&top], &labels, false)?,
                    bottom.iter().enumerate().map(|(i, &x)| (i >= h.patch_area()).then_some(x)).collect(),
                ),
            };
            t.cross_entropy(logits, &targets, 0.1)
        }));
        check!(e <= E2E_TOL, "{level} prior loss: relative error {e:.2e}");
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn run() -> Outcome {
    let (n, worst, name) = ops()?;
    let vq = vq_end_to_end()?;
    let tf = transformer_end_to_end()?;
    Ok(format!(
        "{n} op checks, worst {worst:.1e} ({name}) ≤ {OP_TOL:e}; VQ-VAE loss {vq:.1e}, prior losses {tf:.1e} ≤ {E2E_TOL:e}"
    ))
}
