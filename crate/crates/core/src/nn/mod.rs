//! Reverse-mode differentiation and the layers built on it.
//!
//! A [`Tape`] records every operation of one forward pass together with
//! the intermediates its backward rule needs. [`Tape::backward`] walks
//! the record in reverse and accumulates gradients additively wherever a
//! value fans out. Parameters live outside the tape in a [`ParamStore`]
//! and enter it by value through [`Tape::param`].
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient checks run the very same code in `f64`.

mod attention;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod loss;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use attention::AttentionMask;
pub use conv::ConvGeom;
pub use layers::{Conv2d, ConvTranspose2d, Embedding, LayerNorm, Linear};
pub use loss::label_smoothed_targets;
pub use optim::{clip_grad_norm, Adam, AdamConfig, WarmupSchedule};
pub use params::{ParamBuilder, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
