//! Guided depth super-resolution engine.
//!
//! A self-contained CPU implementation of the IGAF architecture: a tensor and
//! reverse-mode autodiff core, the fusion blocks (channel attention, feature
//! extraction, wide-focus, spatial attention fusion), depth refinement, and a
//! deterministic training/evaluation harness with synthetic RGB-D scenes for
//! dataset-free runs.

pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
