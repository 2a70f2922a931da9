//! Two-stage retrosynthesis: reaction-center ranking with synthon completion,
//! followed by text-assisted re-ranking of candidate reactant sets.

pub mod center;
pub mod chem;
pub mod completion;
pub mod config;
pub mod data;
pub mod error;
pub mod gnn;
pub mod nn;
pub mod pipeline;
pub mod rerank;
pub mod text;

pub use error::{Result, TrexError};
