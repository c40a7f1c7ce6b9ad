//! Language-model output layers and the machinery around them.
//!
//! The crate trains a small fixed-window contextual encoder against one of
//! several interchangeable output heads (full, sampled and adaptive softmax,
//! and the softmax-free SemFit layer that regresses the context vector onto
//! fixed pre-trained word embeddings). Alongside training it provides the
//! analysis tools that check what the SemFit objective converges to, and a
//! benchmark harness that measures how each head scales with vocabulary size.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bench;
pub mod checkpoint;
pub mod corpus;
pub mod embedding;
pub mod encoder;
mod error;
pub mod linalg;
pub mod output;
pub mod real;
pub mod train;

pub use error::{Error, Result};
