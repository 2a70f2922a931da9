//! Synthon completion: action model, beam search and candidate assembly.

pub mod actions;
pub mod beam;
pub mod candidates;
pub mod model;

pub use actions::{build_vocab, derive_actions, Action, ActionLayout, AttachItem, PartialGraph};
pub use beam::{beam_search, complete_synthon, Completion, ModelPolicy, StepPolicy};
pub use candidates::{generate_candidates, Candidate, CandidateSet};
pub use model::{completion_loss, teacher_states, CompletionConfig, CompletionModel, StepInput, StepScores};

#[cfg(test)]
mod tests;
