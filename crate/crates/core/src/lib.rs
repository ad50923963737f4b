//! Discrete diffusion over flattened layout token sequences, with
//! strong-constraint and logit-adjustment conditioning at sampling time.

pub mod cli;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod quantizer;
pub mod render;
pub mod sampler;
pub mod seed;
pub mod task;
pub mod tokens;

pub use error::{Error, ErrorClass, Result};
pub use layout::{BBox, Element, Layout};
pub use quantizer::{Modality, QuantizerKind, Vocabulary};
pub use task::{make_condition, ConditionOptions, TaskCondition, TaskKind};
pub use tokens::TokenSeq;
