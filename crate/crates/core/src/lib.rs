//! Gradient flow near the origin saddle of deep bias-free ReLU networks.
//!
//! The crate covers the localized loss `ℒ₀(θ) = Tr[Gᵀ Y_θ]` and its exact
//! gradient ([`network`]), gradient-flow integrators and closed-form norm
//! growth ([`dynamics`]), escape-direction search on the radius-`√L` sphere
//! ([`escape`]), low-rank diagnostics and bounds ([`analysis`]), explicit
//! constructions ([`constructions`]) and the experiment harness behind the
//! `escape-lab` CLI ([`experiments`]).

pub mod analysis;
pub mod constructions;
pub mod dynamics;
pub mod error;
pub mod escape;
pub mod experiments;
pub mod linalg;
pub mod network;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use network::{Dataset, NetworkParams};
