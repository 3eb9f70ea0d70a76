//! Region inpainting and generation from scratch.
//!
//! A [`RegionSelection`] on either codemap becomes a pair of inpainting
//! masks. Top selections resample the top rectangle and then the bottom
//! tokens aligned with it; bottom selections resample only bottom tokens
//! with the top codemap held fixed. Tokens outside the masks are never
//! touched.

mod engine;
mod region;
mod sample;

pub use engine::Engine;
pub use region::{region_to_mask, RegionSelection};
pub use sample::{sample_level, sample_level_observed, sample_token, softmax_with_temperature, top_p_filter};
