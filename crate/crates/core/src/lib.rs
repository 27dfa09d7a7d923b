//! Micro-transformer text classification with mixup applied to pooled
//! encoder representations.
//!
//! ```text
//! tokens ─► encoder T ─► pooled h ─► mix(h, h[perm], λ) ─► head ─► loss(ŷ)
//!                                         labels ─► mix(y, y[perm], λ) ──┘
//! ```
//!
//! The encoder, the mixing layer and the head are trained end to end: the
//! backward pass routes the head gradient through the mix back into both
//! members of every pair, so the mixed features move with the encoder.

pub mod data;
pub mod error;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Dual, Tensor};
