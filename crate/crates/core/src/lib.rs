//! Strategic conversations between two agents in three games
//! (Rock-Paper-Scissors, repeated Bertrand pricing, size-price bargaining),
//! the behavioral signals used to score them, and the policy-gradient and
//! preference losses used to train desk-scale template policies.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod agents;
pub mod dialogue;
pub mod distribution;
pub mod game;
pub mod scalar;
pub mod signals;
pub mod training;

pub use scalar::Scalar;

/// `f64` template policy.
pub type Policy = agents::TemplatePolicy<f64>;
/// `f64` linear-softmax model.
pub type Model = agents::LinearSoftmax<f64>;
/// `f64` action distribution.
pub type Dist = distribution::Distribution<f64>;
/// `f32` template policy.
pub type PolicyF32 = agents::TemplatePolicy<f32>;
