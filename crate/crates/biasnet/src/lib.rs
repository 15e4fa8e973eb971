//! Noise-adaptive digit recognition built around a small CNN whose
//! convolutional-layer biases are retrained per noise level and swapped in at
//! runtime according to a measured ambient noise level.
//!
//! The crate is organized bottom-up:
//!
//! - [`rng`] — seeded, platform-stable random number generation (stream and
//!   counter-based forms).
//! - [`tensor`] / [`ops`] — a dense tensor type and the forward/backward
//!   kernels the two networks need (convolution, max pooling, dense layers,
//!   tanh/sigmoid, softmax cross-entropy, SGD).
//! - [`detector`] — binary hypothesis testing: MAP thresholds, the
//!   single-neuron correspondence, background classification, rule reversal.
//! - [`dataset`] / [`synth`] — IDX ingestion, the two corruption families
//!   (clamped AWGN and uniform background blending), and a deterministic
//!   synthetic digit corpus for hermetic runs.
//! - [`model`] — the LeNet-style CNN and the denoising autoencoder.
//! - [`checkpoint`] — manifest-plus-blob serialization for parameters,
//!   bias banks, and dataset caches.
//! - [`training`] — full training, bias-only retraining, bank assembly.
//! - [`runtime`] — the measurement-driven controller: parameter-set
//!   selection, bias interpolation, rule reversal, inference.
//! - [`eval`] — sweeps, crossover extraction, CSV/SVG emission, and the
//!   end-to-end experiment pipeline.

pub mod checkpoint;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod model;
pub mod ops;
pub mod rng;
pub mod runtime;
pub mod synth;
pub mod tensor;
pub mod training;

mod error;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
