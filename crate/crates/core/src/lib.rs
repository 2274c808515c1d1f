//! Exact categorical sampling fused into a tiled matmul epilogue.
//!
//! Sampling one index per row from `softmax(H W^T)` needs only the argmax of
//! Gumbel-perturbed logits, so it can run inside the matmul's epilogue: logits
//! are produced tile by tile, perturbed on the fly, and only one `(score,
//! index)` candidate per row and vocabulary tile survives to a small final
//! reduction. The `[B,V]` logits matrix is never materialized, and a byte
//! ledger proves it.
//!
//! The crate also provides the exact grouped variants (parallel, streaming
//! with O(group) memory, and sharded tensor-parallel with constant-size
//! messages), reference samplers to compare against, an analytic cost model
//! for the decode regime, and the statistical harness that verifies every
//! sampler against exact probabilities.
//!
//! All numeric code is generic over the scalar type ([`scalar::Scalar`]);
//! `f64` is the default used everywhere in the verification suites, `f32` is
//! the reduced-precision mode. Concrete aliases for both live at the crate
//! root.

#![forbid(unsafe_code)]

pub mod costmodel;
pub mod distributed;
pub mod error;
pub mod fused;
pub mod grouped;
pub mod matrix;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod statcheck;
pub mod synth;

pub use error::{Error, Result};
pub use rng::{Domain, RngKey, StreamIndex, UniformOpen01};

/// Default working scalar for the verification suites.
pub type DefaultScalar = f64;

pub type LogitsRow64 = samplers::LogitsRow<f64>;
pub type LogitsRow32 = samplers::LogitsRow<f32>;
pub type TransformSpec64 = samplers::TransformSpec<f64>;
pub type TransformSpec32 = samplers::TransformSpec<f32>;
pub type SampleResult64 = samplers::SampleResult<f64>;
pub type SampleResult32 = samplers::SampleResult<f32>;
pub type HiddenStates64 = matrix::HiddenStates<f64>;
pub type HiddenStates32 = matrix::HiddenStates<f32>;
pub type LmHeadWeights64 = matrix::LmHeadWeights<f64>;
pub type LmHeadWeights32 = matrix::LmHeadWeights<f32>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type GroupSummary64 = grouped::GroupSummary<f64>;
pub type GroupSummary32 = grouped::GroupSummary<f32>;
