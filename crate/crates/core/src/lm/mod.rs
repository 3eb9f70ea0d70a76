//! Masked autoregressive Transformers over codemaps.
//!
//! The top model predicts the coarse codemap token by token, with an
//! encoder that sees the fixed future tokens of an inpainting mask. The
//! bottom model predicts the fine codemap patch by patch, each patch
//! attending only to its parent top token.
//!
//! Sequences start with START symbols (id `K`). The decoder input at
//! position `i` is the target token at `i - 1`, so the output at `i`
//! predicts token `i` and bottom position `i` lines up with top position
//! `i / P`.

mod labels;
mod linear;
mod masks;
mod model;
mod net;

pub use labels::{ConditioningLabels, LabelVocab};
pub use linear::{
    delinearize_bottom, delinearize_top, linearize_bottom, linearize_top, parent_index, HierarchyConfig, LinearSeq,
    Origin,
};
pub use masks::{bottom_masks, top_masks, InpaintMask, LevelMasks};
pub use model::{
    bottom_logits, masked_source, shift_right, top_logits, IncrementalDecoder, MaskSampler, Prior, PriorExample,
    PriorMetrics, PriorTrainer,
};
pub use net::{Level, LmMeta, NetInput, PriorNet};
