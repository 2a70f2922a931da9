//! Beam search over generation actions.

use std::collections::HashSet;

use super::actions::{Action, AttachItem, PartialGraph};
use super::model::CompletionModel;
use crate::chem::canon::canonical_molecule;
use crate::chem::{Molecule, Synthon};
use crate::error::Result;
use crate::nn::ParamStore;

/// Source of per-state action log-probabilities.
pub trait StepPolicy {
    fn vocab(&self) -> &[AttachItem];
    fn max_actions(&self) -> usize;
    /// One row per state in that state's action layout; `-inf` marks
    /// actions that must not be taken.
    fn log_probs(&self, states: &[&PartialGraph]) -> Result<Vec<Vec<f64>>>;
}

/// A trained model bound to one product latent.
pub struct ModelPolicy<'a> {
    pub model: &'a CompletionModel,
    pub store: &'a ParamStore,
    pub readout: &'a [f64],
}

impl StepPolicy for ModelPolicy<'_> {
    fn vocab(&self) -> &[AttachItem] {
        &self.model.cfg.vocab
    }

    fn max_actions(&self) -> usize {
        self.model.cfg.max_actions
    }

    fn log_probs(&self, states: &[&PartialGraph]) -> Result<Vec<Vec<f64>>> {
        self.model.log_probs(self.store, states, self.readout)
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub molecule: Molecule,
    pub log_prob: f64,
    pub actions: Vec<Action>,
    pub action_log_probs: Vec<f64>,
}

struct Hypothesis {
    state: PartialGraph,
    score: f64,
    actions: Vec<Action>,
    logps: Vec<f64>,
}

/// Keeps the `beam` best expansions per step; hypotheses end at stop and
/// are dropped when they exceed the action limit. Finished molecules are
/// deduplicated by canonical form, keeping the higher score.
pub fn beam_search(policy: &dyn StepPolicy, start: PartialGraph, beam: usize) -> Result<Vec<Completion>> {
    let beam = beam.max(1);
    let vocab_len = policy.vocab().len();
    let mut live = vec![Hypothesis {
        state: start,
        score: 0.0,
        actions: Vec::new(),
        logps: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let states: Vec<&PartialGraph> = live.iter().map(|h| &h.state).collect();
        let rows = policy.log_probs(&states)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, row) in rows.iter().enumerate() {
            for (ai, &lp) in row.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((live[hi].score + lp, hi, ai));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);
        let mut next = Vec::with_capacity(cands.len());
        for (score, hi, ai) in cands {
            let h = &live[hi];
            let layout = h.state.layout(vocab_len);
            let action = layout.action(ai);
            let lp = rows[hi][ai];
            let mut actions = h.actions.clone();
            actions.push(action);
            let mut logps = h.logps.clone();
            logps.push(lp);
            let mut state = h.state.clone();
            if state.apply(action, policy.vocab()).is_err() {
                continue;
            }
            let hyp = Hypothesis {
                state,
                score,
                actions,
                logps,
            };
            if action == Action::Stop {
                finished.push(hyp);
            } else if hyp.state.steps < policy.max_actions() {
                next.push(hyp);
            }
        }
        live = next;
        if finished.len() >= beam {
            finished.sort_by(|a, b| b.score.total_cmp(&a.score));
            let bar = finished[beam - 1].score;
            live.retain(|h| h.score > bar);
        }
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for h in finished {
        if out.len() == beam {
            break;
        }
        if seen.insert(canonical_molecule(&h.state.mol, true)) {
            out.push(Completion {
                molecule: h.state.mol,
                log_prob: h.score,
                actions: h.actions,
                action_log_probs: h.logps,
            });
        }
    }
    Ok(out)
}

/// Ranked reactant hypotheses for one synthon.
pub fn complete_synthon(policy: &dyn StepPolicy, synthon: &Synthon, beam: usize) -> Result<Vec<Completion>> {
    beam_search(policy, PartialGraph::from_synthon(synthon), beam)
}
