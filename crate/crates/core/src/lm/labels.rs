use serde::{Deserialize, Serialize};

use crate::dataset::{PITCH_MAX, PITCH_MIN};
use crate::error::{ensure, Result};

/// Global pitch and instrument constraints of one sound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningLabels {
    pitch: u8,
    instrument: u8,
}

impl ConditioningLabels {
    pub fn new(pitch: u8, instrument: u8, vocab: &LabelVocab) -> Result<Self> {
        ensure!(
            (PITCH_MIN..=PITCH_MAX).contains(&pitch),
            InvalidInput,
            "pitch {pitch} outside MIDI {PITCH_MIN}..={PITCH_MAX}"
        );
        ensure!(
            (instrument as usize) < vocab.families.len(),
            InvalidInput,
            "instrument {instrument} outside the {} known families",
            vocab.families.len()
        );
        Ok(Self { pitch, instrument })
    }

    pub fn pitch(&self) -> u8 {
        self.pitch
    }

    pub fn instrument(&self) -> u8 {
        self.instrument
    }

    pub(crate) fn pitch_index(&self) -> usize {
        (self.pitch - PITCH_MIN) as usize
    }
}

/// Label vocabularies a model was trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub families: Vec<String>,
}

impl LabelVocab {
    pub fn new(families: Vec<String>) -> Result<Self> {
        ensure!(
            !families.is_empty() && families.len() <= 256,
            InvalidConfig,
            "instrument vocabulary must hold 1..=256 families"
        );
        Ok(Self { families })
    }

    pub fn synthetic() -> Self {
        Self {
            families: crate::dataset::SYNTH_FAMILIES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_pitches(&self) -> usize {
        (PITCH_MAX - PITCH_MIN) as usize + 1
    }

    pub fn pitches(&self) -> std::ops::RangeInclusive<u8> {
        PITCH_MIN..=PITCH_MAX
    }
}
