//! Two-level VQ-VAE over Mel-IF grams.
//!
//! A gram is compressed into a coarse top codemap and a finer bottom
//! codemap whose patches are aligned with the top cells. Codebooks are
//! learned with exponential moving averages; encoder gradients flow through
//! quantization with the straight-through estimator.

mod codebook;
mod codes;
mod loss;
mod model;
pub mod net;

pub use codebook::{perplexity, Codebook, Quantized};
pub use codes::{CodeGrid, CodemapPair};
pub use loss::{masked_recon_loss, masked_recon_loss_var};
pub use model::{forward, quantize_st, AmpNorm, Batch, ForwardOut, QuantState, TrainMetrics, VqVae, VqVaeTrainer};
pub use net::VqVaeNet;
