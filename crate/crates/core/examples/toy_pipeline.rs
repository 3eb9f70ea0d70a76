//! Runs the toy pipeline end to end and prints progress.

use std::time::Instant;

use spectro_core::config::RunConfig;
use spectro_core::dataset::{extract_codemaps, SYNTH_FAMILIES};
use spectro_core::lm::{LabelVocab, Level};
use spectro_core::pipeline::{encode_notes, store_examples, synth_dataset, train_prior, train_vqvae};

fn main() -> spectro_core::Result<()> {
    let cfg = RunConfig::toy();
    let vq_steps: u64 = std::env::args().nth(1).map_or(cfg.vqvae.steps, |s| s.parse().unwrap());
    let lm_steps: u64 = std::env::args().nth(2).map_or(cfg.lm.steps, |s| s.parse().unwrap());
    let t0 = Instant::now();
    let codec = cfg.dsp.codec()?;
    let notes = synth_dataset(&cfg)?;
    let grams = encode_notes(&codec, &notes)?;
    let vq = train_vqvae(&cfg, &grams, vq_steps, &mut |m| {
        if m.step % 250 == 0 {
            println!("vq {} recon {:.4} ppl {:.1}/{:.1}", m.step, m.recon_loss, m.perplexity_top, m.perplexity_bottom);
        }
    })?;
    println!("vq done {:?}", t0.elapsed());
    let dir = std::env::temp_dir().join("spectro_toy_pipeline");
    std::fs::create_dir_all(&dir).unwrap();
    let store = extract_codemaps(&vq, &codec, &notes, &dir.join("codemaps.spin"), 32)?;
    let vocab = LabelVocab::new(SYNTH_FAMILIES.iter().map(|s| s.to_string()).collect())?;
    let examples = store_examples(&store, &vocab)?;
    for level in [Level::Top, Level::Bottom] {
        let t1 = Instant::now();
        let prior = train_prior(&cfg, level, &vocab, &examples, lm_steps, &mut |m| {
            if m.step % 250 == 0 {
                println!("{level} {} loss {:.4} acc {:.3}", m.step, m.loss, m.accuracy);
            }
        })?;
        println!(
            "{level} nll {:.4} (ln K {:.4}) in {:?}",
            prior.eval_nll(&examples)?,
            (cfg.vqvae.codebook_size as f64).ln(),
            t1.elapsed()
        );
    }
    println!("total {:?}", t0.elapsed());
    Ok(())
}
