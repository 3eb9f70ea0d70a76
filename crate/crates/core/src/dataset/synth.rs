use std::f64::consts::PI;

use super::{PITCH_MAX, PITCH_MIN, SYNTH_FAMILIES};
use crate::error::{ensure, Result};
use crate::rng::SeededRng;

/// One labelled mono note.
#[derive(Clone, Debug, PartialEq)]
pub struct NoteRecord {
    pub id: u32,
    pub waveform: Vec<f64>,
    pub sample_rate: u32,
    /// MIDI pitch.
    pub pitch: u8,
    /// Index into the family vocabulary.
    pub instrument: u8,
    /// Seconds.
    pub duration: f64,
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

/// Harmonic amplitude of partial `h` (1-based) for each family.
fn harmonic_amp(family: usize, h: usize) -> f64 {
    let h = h as f64;
    match family {
        // plucked string: bright attack, 1/h rolloff
        0 => 1.0 / h,
        // sustained (flute/organ-like): steep rolloff
        1 => 1.0 / (h * h),
        // brassy: strong upper partials
        2 => 1.0 / h.sqrt(),
        // noisy: odd partials over a noise bed
        _ => {
            if h as usize % 2 == 1 {
                1.0 / h
            } else {
                0.2 / h
            }
        }
    }
}

/// Amplitude envelope at time `t` for a note of `dur` seconds.
fn envelope(family: usize, t: f64, dur: f64) -> f64 {
    match family {
        0 => {
            let attack = 0.005f64.min(dur * 0.02);
            if t < attack {
                t / attack
            } else {
                (-(t - attack) * 5.0 / dur).exp()
            }
        }
        _ => {
            let (attack, decay, sustain, release) = match family {
                1 => (0.1, 0.1, 0.8, 0.3),
                2 => (0.15, 0.1, 0.7, 0.15),
                _ => (0.05, 0.2, 0.6, 0.2),
            };
            let (a, d, r) = (attack * dur, decay * dur, release * dur);
            if t < a {
                t / a
            } else if t < a + d {
                1.0 - (1.0 - sustain) * (t - a) / d
            } else if t < dur - r {
                sustain
            } else {
                sustain * ((dur - t) / r).max(0.0)
            }
        }
    }
}

/// Additive-synthesis note at MIDI `pitch`, peak-normalized to 0.5.
///
/// Each family has its own harmonic table and envelope; partial phases
/// and the noise bed of the `noisy` family are drawn from `seed`.
pub fn synth_note(pitch: u8, family: u8, duration: f64, sample_rate: u32, seed: u64) -> Result<NoteRecord> {
    ensure!(
        (PITCH_MIN..=PITCH_MAX).contains(&pitch),
        InvalidInput,
        "pitch {pitch} outside MIDI {PITCH_MIN}..={PITCH_MAX}"
    );
    ensure!(
        (family as usize) < SYNTH_FAMILIES.len(),
        InvalidInput,
        "unknown synthetic family {family}"
    );
    ensure!(
        duration.is_finite() && duration > 0.0,
        InvalidInput,
        "duration must be positive"
    );
    ensure!(sample_rate > 0, InvalidInput, "sample rate must be positive");
    let fam = family as usize;
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    ensure!(n > 0, InvalidInput, "note shorter than one sample");
    let f0 = midi_to_hz(pitch as f64);
    let mut rng = SeededRng::fork(seed, (pitch as u64) << 8 | family as u64);
    let n_harm = ((sr / 2.0 * 0.95) / f0).floor().clamp(1.0, 32.0) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
    let mut wave = vec![0.0; n];
    for (h, phase) in phases.iter().enumerate().map(|(i, p)| (i + 1, p)) {
        let amp = harmonic_amp(fam, h);
        let w = 2.0 * PI * f0 * h as f64 / sr;
        // Plucked partials die faster the higher they are.
        let extra_decay = if fam == 0 { (h as f64 - 1.0) * 2.0 / duration } else { 0.0 };
        for (i, s) in wave.iter_mut().enumerate() {
            let t = i as f64 / sr;
            *s += amp * (-extra_decay * t).exp() * (w * i as f64 + phase).sin();
        }
    }
    if fam == 3 {
        // One-pole low-passed white noise.
        let mut state = 0.0;
        for s in wave.iter_mut() {
            state = 0.7 * state + 0.3 * rng.uniform_range(-1.0, 1.0);
            *s += 0.6 * state;
        }
    }
    for (i, s) in wave.iter_mut().enumerate() {
        *s *= envelope(fam, i as f64 / sr, duration);
    }
    let peak = wave.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        for s in wave.iter_mut() {
            *s *= 0.5 / peak;
        }
    }
    Ok(NoteRecord {
        id: 0,
        waveform: wave,
        sample_rate,
        pitch,
        instrument: family,
        duration: n as f64 / sr,
    })
}

/// `count` notes cycling through every family and every pitch in
/// `pitch_min..=pitch_max`, with per-note seeds derived from `seed`.
pub fn synth_notes(
    count: usize,
    pitch_min: u8,
    pitch_max: u8,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<NoteRecord>> {
    ensure!(pitch_min <= pitch_max, InvalidInput, "empty pitch range");
    let fams = SYNTH_FAMILIES.len();
    let span = (pitch_max - pitch_min) as usize + 1;
    let mut rng = SeededRng::fork(seed, 0x6e6f);
    (0..count)
        .map(|i| {
            let family = (i % fams) as u8;
            // Walk pitches so every family sees the whole range.
            let pitch = pitch_min + ((i / fams + i * 7) % span) as u8;
            let mut note = synth_note(pitch, family, duration, sample_rate, rng.next_u64())?;
            note.id = i as u32;
            Ok(note)
        })
        .collect()
}
