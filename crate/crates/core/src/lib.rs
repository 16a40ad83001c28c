//! Multi-view knowledge modeling.
//!
//! Student interactions with several kinds of learning material (graded quizzes,
//! non-graded discussions, ...) are factorized as `x[s, a, p] ~ s_s . T_a . q_p`
//! plus biases, with a shared student matrix `S`, a shared attempt-indexed knowledge
//! tensor `T` and a per-view concept map `Q[r]`. A rank-based penalty rewards
//! predicted scores that rise from one attempt to the next.
//!
//! Modules follow the workflow: [`data`] ingestion, [`synth`] generation, [`model`]
//! and [`train`] for fitting, [`eval`] for the online protocol and [`analysis`] for
//! inspecting the learned factors. [`cli`] wires everything into the `mvkm` binary.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
