use std::f64::consts::PI;

use spectro_core::config::RunConfig;
use spectro_core::dsp::{if_to_phase, istft, melif_decode, melif_encode, phase_to_if, stft, wrap_phase, Grid};
use spectro_core::rng::SeededRng;

use crate::Outcome;

fn interior(x: &[f64], y: &[f64], margin: usize) -> (f64, f64) {
    let hi = x.len().min(y.len()) - margin;
    let err = (margin..hi).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>();
    let sig = (margin..hi).map(|i| x[i].powi(2)).sum::<f64>();
    (err, sig)
}

pub fn run() -> Outcome {
    let mut rng = SeededRng::new(200);

    let mut worst_stft: f64 = 0.0;
    for cfg in [RunConfig::toy().dsp.stft(), RunConfig::paper().dsp.stft()] {
        let x: Vec<f64> = (0..16_000).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let y = tri!(istft(&tri!(stft(&x, &cfg)), &cfg));
        let (err, sig) = interior(&x, &y, cfg.n_fft);
        let rel = (err / sig).sqrt();
        check!(rel <= 1e-6, "stft/istft n_fft {}: relative L2 {rel:.2e}", cfg.n_fft);
        worst_stft = worst_stft.max(rel);
    }

    let phase = Grid::from_fn(129, 200, |_, _| rng.uniform_range(-PI, PI));
    let back = if_to_phase(&phase_to_if(&phase));
    let worst_if = phase
        .as_slice()
        .iter()
        .zip(back.as_slice())
        .map(|(a, b)| wrap_phase(a - b).abs())
        .fold(0.0, f64::max);
    check!(worst_if <= 1e-9, "phase/IF round trip off by {worst_if:.2e} rad");

    let dsp = RunConfig::toy().dsp;
    let (s, m) = (dsp.stft(), dsp.mel());
    check!(
        m.n_mels * 2 == s.n_bins(),
        "toy mel bank has {} rows for {} bins",
        m.n_mels,
        s.n_bins()
    );
    let mut snrs = Vec::new();
    for pitch in [48.0, 55.0, 60.0, 67.0, 72.0] {
        let f0 = 440.0 * 2f64.powf((pitch - 69.0) / 12.0);
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / s.sample_rate as f64;
                [(1.0, 0.3), (2.0, 0.15), (3.0, 0.075)]
                    .iter()
                    .map(|(h, a)| a * (2.0 * PI * h * f0 * t).sin())
                    .sum()
            })
            .collect();
        let y = tri!(melif_decode(&tri!(melif_encode(&x, &s, &m, dsp.log_amp_floor)), &s, &m));
        let (err, sig) = interior(&x, &y, s.n_fft);
        snrs.push((pitch, 10.0 * (sig / err).log10()));
    }
    let listed: Vec<String> = snrs.iter().map(|(p, s)| format!("MIDI {p} {s:.1} dB")).collect();
    let low: Vec<&String> = snrs.iter().zip(&listed).filter(|((_, s), _)| *s < 15.0).map(|(_, l)| l).collect();
    check!(
        low.is_empty(),
        "Mel-IF round trip below 15 dB at n_mels = n_bins/2: {} (all: {})",
        low.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
        listed.join(", ")
    );
    Ok(format!(
        "stft/istft rel L2 {worst_stft:.1e} ≤ 1e-6; phase/IF {worst_if:.1e} ≤ 1e-9; Mel-IF SNR ≥ 15 dB: {}",
        listed.join(", ")
    ))
}
