//! Pitch conditioning: samples at MIDI 60 should sit in a higher mel band
//! than samples at MIDI 48 with the same seed and instrument.

use spectro_core::bundle::ModelBundle;
use spectro_core::config::SamplerConfig;
use spectro_core::dsp::MelIFGram;
use spectro_core::lm::ConditioningLabels;

use crate::Outcome;

const PAIRS: u64 = 20;
const NEEDED: usize = 14;

/// Median over frames of the loudest mel row.
fn dominant_band(gram: &MelIFGram) -> usize {
    let (rows, cols) = gram.log_amp.shape();
    let mut peaks: Vec<usize> = (0..cols)
        .map(|c| (0..rows).fold(0, |best, r| if gram.log_amp.get(r, c) > gram.log_amp.get(best, c) { r } else { best }))
        .collect();
    peaks.sort_unstable();
    peaks[peaks.len() / 2]
}

fn band(bundle: &ModelBundle, pitch: u8, instrument: u8, seed: u64) -> Result<usize, String> {
    let labels = tri!(ConditioningLabels::new(pitch, instrument, bundle.vocab()));
    let s = SamplerConfig { seed, ..SamplerConfig::default() };
    let codes = tri!(bundle.engine().generate(labels, &s));
    let (gram, _) = tri!(bundle.render(&codes));
    Ok(dominant_band(&gram))
}

pub fn run(trained: Option<&ModelBundle>) -> Outcome {
    let bundle = trained.ok_or("no trained models: toy training did not produce a bundle")?;
    let mut higher = 0;
    let mut pairs = Vec::new();
    for i in 0..PAIRS {
        let inst = (i % 4) as u8;
        let (hi, lo) = (band(bundle, 60, inst, i)?, band(bundle, 48, inst, i)?);
        if hi > lo {
            higher += 1;
        }
        pairs.push(format!("{hi}/{lo}"));
    }
    let text = format!(
        "band(60) > band(48) in {higher}/{PAIRS} pairs, need {NEEDED} [{}]",
        pairs.join(" ")
    );
    check!(higher >= NEEDED, "{text}");
    Ok(text)
}
