//! Joint language-visual order embeddings.
//!
//! Trains and evaluates three ranking models over caption/video pairs —
//! simple-average encoders (m1), an LSTM sentence encoder (m2), and an LSTM
//! with soft attention over video frames (m3) — under the order-violation
//! similarity `S(c, v) = -||max(0, c - v)||^2` with pairwise or
//! annotation-only ranking losses. Includes retrieval metrics (recall@K,
//! median rank) and a 5-way multiple-choice test builder with
//! activity-label-disjoint distractors.

pub mod checkpoint;
pub mod data;
pub mod encoders;
mod error;
pub mod eval;
pub(crate) mod math;
pub mod mctest;
pub mod model;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
