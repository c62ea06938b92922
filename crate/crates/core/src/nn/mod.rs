//! Model configuration, parameter store, and the fusion architecture blocks.

pub mod blocks;
pub mod config;
pub mod gradsuite;
mod store;

pub use blocks::{init_params, param_count, param_layout, IgafModel};
pub use config::{FusionKind, ModelConfig, SkipLocation};
pub use store::{BoundParams, Init, ParamStore};
