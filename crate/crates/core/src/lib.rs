//! Domain-adaptive semantic segmentation at desk scale.
//!
//! The crate covers the full pipeline: procedural source/target domains,
//! rare-class sampling, a hierarchical transformer segmenter with a
//! context-aware fusion decoder, self-training with an EMA teacher,
//! multi-resolution context/detail training with learned scale attention,
//! a style-consistency generalization mode, and the training engine.

pub mod data;
pub mod dg;
pub mod engine;
pub mod error;
pub mod hrda;
pub mod losses;
pub mod model;
pub mod sampling;
pub mod selftrain;

pub use error::{Error, Result};
