//! Speech denoising with complex-valued masking networks trained on either
//! clean targets (Noise2Clean) or independently corrupted noisy targets
//! (Noise2Noise).
//!
//! The crate covers the whole pipeline: WAV I/O ([`audio`]), energy-preserving
//! STFT ([`spectral`]), training-pair synthesis ([`mixgen`]), a small complex
//! tensor engine with reverse-mode gradients ([`cxnn`]), the encoder-decoder
//! masking network ([`dcunet`]), losses and the noisy-target equivalence
//! harness ([`objective`]), evaluation metrics ([`metrics`]) and the training
//! loop ([`trainer`]).

pub mod audio;
pub mod checkpoint;
pub mod cxnn;
pub mod dcunet;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod mixgen;
pub mod objective;
pub mod real;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use real::{Precision, Real};
