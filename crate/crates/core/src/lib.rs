//! Globally normalized transition-based neural structured prediction.
//!
//! Transition systems for tagging, arc-standard dependency parsing,
//! and extractive sentence compression; a feed-forward scorer with
//! manual backpropagation; local (per-step softmax) and global (CRF)
//! training with beam search and early updates; plus an executable
//! demonstration that globally normalized models are strictly more
//! expressive than locally normalized ones.

pub mod archive;
pub mod corpus;
pub mod error;
pub mod features;
pub mod inference;
pub mod input;
pub mod labbias;
pub mod model;
pub mod network;
pub mod tasks;
pub mod training;
pub mod transition;

pub use error::{Error, Result};
pub use input::{Input, Token};
pub use model::{Model, Scorer};
pub use tasks::{GoldAnnotation, Metrics, PredictedStructure};
pub use transition::{Decision, State, TaskKind, TransitionSystem};
