//! Template matching with a fuzzy decision forest.
//!
//! Templates are quantized multi-modal descriptors of rendered object views.
//! A forest of exemplar-split trees narrows a query window down to a short
//! candidate list, rejecting background windows early with a per-node
//! known-value test; candidates are then scored chunk by chunk, dropping the
//! weaker half after every chunk.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod forest;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
