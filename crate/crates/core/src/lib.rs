//! Spectrogram inpainting for instrument sounds.
//!
//! Sounds are converted to a two-channel Mel-IF spectrogram ([`dsp`]),
//! compressed by a two-level VQ-VAE into a pair of integer codemaps
//! ([`vqvae`]), and regenerated region by region with masked
//! autoregressive Transformers ([`lm`], [`inpaint`]). Every network is
//! built on the small reverse-mode differentiation engine in [`nn`].

pub mod bundle;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod inpaint;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod vqvae;

pub use error::{Error, Result};
