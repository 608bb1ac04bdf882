//! Streaming attention decoding with a sublinear-size KV cache.
//!
//! The streaming estimator ([`stream_attn::SubGenState`]) keeps one small
//! reservoir of keys per online key cluster to estimate the softmax
//! normalizer, and a value-norm weighted sample of `(key, value)` pairs to
//! estimate the attention numerator. Around it sit an exact full-cache
//! oracle ([`attn`]), offline eviction baselines ([`compress`]), seeded
//! synthetic stream generators ([`streamgen`]) and the benchmark harness
//! behind the `subgen-bench` binary ([`harness`]).

pub mod attn;
pub mod compress;
mod error;
pub mod harness;
pub mod rng;
pub mod streamgen;
pub mod stream_attn;

pub use attn::{
    ErrorScale,
    exact_attention, operator_norm, softmax_vector, spectral_error, AttnVector, ExactCache,
    TokenTriplet,
};
pub use error::{Error, Result};
pub use stream_attn::{derive_sizes, AccuracyParams, MemoryFootprint, SizeConstants, SubGenState};
