//! Training data: synthetic notes, an NSynth loader and the codemap store.

mod nsynth;
mod store;
mod synth;

pub use nsynth::{load_nsynth, NsynthLoad};
pub use store::{extract_codemaps, CodemapRecord, CodemapStore, StoreHeader, STORE_MAGIC, STORE_VERSION};
pub use synth::{midi_to_hz, synth_note, synth_notes, NoteRecord};

/// Built-in synthetic instrument families, indexed by instrument id.
pub const SYNTH_FAMILIES: [&str; 4] = ["plucked", "sustained", "brassy", "noisy"];

pub const PITCH_MIN: u8 = 24;
pub const PITCH_MAX: u8 = 84;
