//! Manhattan self-attention (MaSA), its axis-decomposed form, and the RMT
//! four-stage vision backbone built from it.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode differentiation.
//! * [`decay`]: per-head decay schedules and the 1D, 2D and axial decay matrices.
//! * [`attention`]: retention baselines, full and decomposed MaSA, LCE and the
//!   multi-head layer.
//! * [`blocks`]: stem, CPE, FFN, RMT block, stage transitions, presets and
//!   parameter/FLOPs accounting.
//! * [`train`]: synthetic data, loss, AdamW, training loop and gradient checks.
//! * [`bench`](mod@bench): decay dumps, model statistics and scaling benchmarks behind the
//!   `masa-kit` command line.

pub mod attention;
pub mod bench;
pub mod blocks;
pub mod decay;
pub mod error;
pub mod params;
pub mod tensor;
pub mod train;

pub use decay::{DecayRate, GridShape};
pub use error::{Error, Result};
pub use params::HasParams;
pub use tensor::Tensor;
