use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{NoteRecord, PITCH_MAX, PITCH_MIN};
use crate::dsp::wav::read_wav;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Meta {
    pitch: i64,
    #[serde(default)]
    instrument_family_str: Option<String>,
    #[serde(default)]
    instrument_family: Option<i64>,
}

/// Records read from an NSynth-style directory, plus how many metadata
/// entries were skipped because they could not be used.
#[derive(Debug, Default)]
pub struct NsynthLoad {
    pub records: Vec<NoteRecord>,
    pub skipped: usize,
}

/// Reads `examples.json` and the matching `audio/<note>.wav` (or
/// `<note>.wav`) files under `dir`.
///
/// Notes outside MIDI 24..=84 are dropped silently. Entries whose family
/// is not in `families`, whose audio is missing or unreadable, or whose
/// metadata is malformed count as skipped. An empty directory yields no
/// records; a non-empty one without metadata is an error.
pub fn load_nsynth(dir: &Path, families: &[String], sample_rate: u32) -> Result<NsynthLoad> {
    let meta_path = dir.join("examples.json");
    if !meta_path.exists() {
        let empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_none();
        if empty {
            return Ok(NsynthLoad::default());
        }
        return Err(Error::InvalidDataset(format!("{} has no examples.json", dir.display())));
    }
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let entries: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidDataset(format!("{}: {e}", meta_path.display())))?;
    let mut out = NsynthLoad::default();
    for (note, value) in entries {
        let Ok(meta) = serde_json::from_value::<Meta>(value) else {
            out.skipped += 1;
            continue;
        };
        if meta.pitch < PITCH_MIN as i64 || meta.pitch > PITCH_MAX as i64 {
            continue;
        }
        let family = match (&meta.instrument_family_str, meta.instrument_family) {
            (Some(name), _) => families.iter().position(|f| f == name),
            (None, Some(i)) if i >= 0 && (i as usize) < families.len() => Some(i as usize),
            _ => None,
        };
        let Some(family) = family else {
            out.skipped += 1;
            continue;
        };
        let candidates = [dir.join("audio").join(format!("{note}.wav")), dir.join(format!("{note}.wav"))];
        let Some(wave) = candidates.iter().find(|p| p.exists()).and_then(|p| read_wav(p).ok()) else {
            out.skipped += 1;
            continue;
        };
        let wave = wave.resampled(sample_rate);
        out.records.push(NoteRecord {
            id: out.records.len() as u32,
            duration: wave.duration_secs(),
            waveform: wave.samples,
            sample_rate,
            pitch: meta.pitch as u8,
            instrument: family as u8,
        });
    }
    if out.skipped > 0 {
        tracing::warn!(skipped = out.skipped, dir = %dir.display(), "skipped unusable NSynth entries");
    }
    Ok(out)
}
