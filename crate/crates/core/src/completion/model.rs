//! Action scoring network for synthon completion.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actions::{Action, ActionLayout, AttachItem, PartialGraph};
use crate::chem::{BondOrder, FeatureSchema, MolecularGraph};
use crate::error::{Result, TrexError};
use crate::gnn::{graph_readout, rgcn_forward, GraphBatch, RgcnParams, RgcnSpec};
use crate::nn::{FeedForward, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub rgcn: RgcnSpec,
    /// Width of the stage-1 product readout that `z` is projected from.
    pub product_width: usize,
    pub latent_width: usize,
    pub hidden: usize,
    pub vocab: Vec<AttachItem>,
    /// Upper bound on actions per synthon, the final stop included.
    pub max_actions: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionModel {
    pub cfg: CompletionConfig,
    pub rgcn: RgcnParams,
    pub proj: ParamId,
    pub ctx: FeedForward,
    pub atom: FeedForward,
    pub bond: FeedForward,
    pub stop: FeedForward,
}

/// One decoding state prepared for the network.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub graph: MolecularGraph,
    pub layout: ActionLayout,
    pub last: Option<usize>,
    pub legal: Vec<bool>,
    /// Row of the latent matrix this state is conditioned on.
    pub latent_row: usize,
}

impl StepInput {
    pub fn new(state: &PartialGraph, vocab: &[AttachItem], latent_row: usize) -> Self {
        let schema = FeatureSchema::default();
        let e = schema.encode(&state.mol);
        StepInput {
            graph: MolecularGraph::with_features(state.mol.clone(), e, String::new()),
            layout: state.layout(vocab.len()),
            last: state.last_added,
            legal: state.legal(vocab),
            latent_row,
        }
    }
}

/// Flattened log-probabilities: step `s` occupies columns
/// `offsets[s] .. offsets[s] + layout.len()`.
pub struct StepScores {
    pub logp: Var,
    pub offsets: Vec<usize>,
}

const PREFIX: &str = "completion";

impl CompletionModel {
    pub fn new(store: &mut ParamStore, cfg: CompletionConfig, rng: &mut ChaCha8Rng) -> Self {
        let s = cfg.rgcn.output_width();
        let h = cfg.hidden;
        let rgcn = RgcnParams::new(store, &format!("{PREFIX}.rgcn"), cfg.rgcn.clone(), rng);
        let proj = store.insert_uniform(&format!("{PREFIX}.proj"), cfg.product_width, cfg.latent_width, rng);
        let ctx = FeedForward::new(store, &format!("{PREFIX}.ctx"), &[cfg.latent_width, h], rng);
        let atom = FeedForward::new(store, &format!("{PREFIX}.atom"), &[s + h, h, cfg.vocab.len()], rng);
        let bond = FeedForward::new(store, &format!("{PREFIX}.bond"), &[2 * s + h, h, BondOrder::COUNT], rng);
        let stop = FeedForward::new(store, &format!("{PREFIX}.stop"), &[s + h, h, 1], rng);
        CompletionModel {
            cfg,
            rgcn,
            proj,
            ctx,
            atom,
            bond,
            stop,
        }
    }

    pub fn bind(store: &ParamStore, cfg: CompletionConfig) -> Result<Self> {
        let missing = |what: &str| TrexError::Checkpoint(format!("missing completion tensor {what}"));
        let rgcn = RgcnParams::bind(store, &format!("{PREFIX}.rgcn"), cfg.rgcn.clone())?;
        let proj = store.id(&format!("{PREFIX}.proj")).ok_or_else(|| missing("proj"))?;
        if store.get(proj).dim() != (cfg.product_width, cfg.latent_width) {
            return Err(TrexError::ShapeMismatch("completion projection shape".into()));
        }
        let ff = |name: &str, depth| FeedForward::bind(store, &format!("{PREFIX}.{name}"), depth).ok_or_else(|| missing(name));
        let model = CompletionModel {
            rgcn,
            proj,
            ctx: ff("ctx", 1)?,
            atom: ff("atom", 2)?,
            bond: ff("bond", 2)?,
            stop: ff("stop", 2)?,
            cfg,
        };
        if model.atom.dims.last() != Some(&model.cfg.vocab.len()) {
            return Err(TrexError::ShapeMismatch("vocabulary size differs from checkpoint".into()));
        }
        Ok(model)
    }

    /// `z = readout · P`, one row per product.
    pub fn latent(&self, t: &mut Tape, readouts: Var) -> Var {
        let p = t.param(self.proj);
        t.matmul(readouts, p)
    }

    /// Tape-free latent of a single product readout.
    pub fn encode_latent(&self, store: &ParamStore, readout: &[f64]) -> Vec<f64> {
        let r = Array2::from_shape_vec((1, readout.len()), readout.to_vec()).expect("row");
        r.dot(store.get(self.proj)).into_iter().collect()
    }

    /// Masked log-probabilities of every action for a batch of states.
    pub fn step_scores(&self, t: &mut Tape, steps: &[StepInput], latents: Var) -> Result<StepScores> {
        let graphs: Vec<&MolecularGraph> = steps.iter().map(|s| &s.graph).collect();
        let batch = GraphBatch::from_graphs(&graphs);
        let x = t.constant(batch.e.clone());
        let h = rgcn_forward(t, &self.rgcn, &batch, x)?;
        let g = graph_readout(t, h, &batch);
        let zc = self.ctx.forward(t, latents);
        let zc = t.relu(zc);

        let step_rows: Vec<usize> = steps.iter().map(|s| s.latent_row).collect();
        let node_rows: Vec<usize> = batch.group.iter().map(|&s| steps[s].latent_row).collect();
        let step_ctx = t.gather_rows(zc, &step_rows);
        let node_ctx = t.gather_rows(zc, &node_rows);

        let atom_in = t.concat_cols(&[h, node_ctx]);
        let atom_logits = self.atom.forward(t, atom_in);
        let stop_in = t.concat_cols(&[g, step_ctx]);
        let stop_logits = self.stop.forward(t, stop_in);

        let mut from = Vec::new();
        let mut to = Vec::new();
        let mut bond_ctx = Vec::new();
        let mut bond_start = Vec::with_capacity(steps.len());
        for (s, st) in steps.iter().enumerate() {
            bond_start.push(from.len());
            if let Some(u) = st.last {
                for j in 0..st.graph.n {
                    from.push(batch.offsets[s] + u);
                    to.push(batch.offsets[s] + j);
                    bond_ctx.push(st.latent_row);
                }
            }
        }
        let vocab = self.cfg.vocab.len();
        let atom_flat = t.flatten(atom_logits);
        let stop_flat = t.flatten(stop_logits);
        let mut parts = vec![atom_flat];
        if !from.is_empty() {
            let hu = t.gather_rows(h, &from);
            let hj = t.gather_rows(h, &to);
            let c = t.gather_rows(zc, &bond_ctx);
            let bond_in = t.concat_cols(&[hu, hj, c]);
            let bond_logits = self.bond.forward(t, bond_in);
            parts.push(t.flatten(bond_logits));
        }
        parts.push(stop_flat);
        let flat = t.concat_cols(&parts);
        let n_atom_cols = batch.n() * vocab;
        let n_bond_cols = from.len() * BondOrder::COUNT;

        let mut cols = Vec::new();
        let mut seg = Vec::new();
        let mut allowed = Vec::new();
        let mut offsets = Vec::with_capacity(steps.len());
        for (s, st) in steps.iter().enumerate() {
            offsets.push(cols.len());
            let n = st.graph.n;
            if st.layout.n != n || st.layout.vocab != vocab || st.legal.len() != st.layout.len() {
                return Err(TrexError::ShapeMismatch("step layout does not match its graph".into()));
            }
            for i in 0..n {
                for v in 0..vocab {
                    cols.push((0, (batch.offsets[s] + i) * vocab + v));
                }
            }
            if st.last.is_some() {
                for j in 0..n {
                    for k in 0..BondOrder::COUNT {
                        cols.push((0, n_atom_cols + (bond_start[s] + j) * BondOrder::COUNT + k));
                    }
                }
            }
            cols.push((0, n_atom_cols + n_bond_cols + s));
            seg.extend(std::iter::repeat_n(s, st.layout.len()));
            allowed.extend_from_slice(&st.legal);
        }
        let ordered = t.pick(flat, &cols);
        let logp = t.segment_log_softmax(ordered, &seg, steps.len(), &allowed);
        Ok(StepScores { logp, offsets })
    }

    /// Per-state log-probability rows (tape-free).
    pub fn log_probs(&self, store: &ParamStore, states: &[&PartialGraph], readout: &[f64]) -> Result<Vec<Vec<f64>>> {
        let steps: Vec<StepInput> = states.iter().map(|s| StepInput::new(s, &self.cfg.vocab, 0)).collect();
        let mut t = Tape::new(store);
        let r = t.constant(Array2::from_shape_vec((1, readout.len()), readout.to_vec()).expect("row"));
        let z = self.latent(&mut t, r);
        let sc = self.step_scores(&mut t, &steps, z)?;
        let v = t.value(sc.logp);
        Ok(steps
            .iter()
            .zip(&sc.offsets)
            .map(|(st, &o)| (0..st.layout.len()).map(|k| v[[0, o + k]]).collect())
            .collect())
    }

    /// Log-probability of an action sequence from `start`, recomputed by
    /// replaying it.
    pub fn score_actions(&self, store: &ParamStore, start: &PartialGraph, actions: &[Action], readout: &[f64]) -> Result<f64> {
        let mut state = start.clone();
        let mut total = 0.0;
        for &a in actions {
            let row = self.log_probs(store, &[&state], readout)?.remove(0);
            let idx = state
                .layout(self.cfg.vocab.len())
                .index(a)
                .ok_or_else(|| TrexError::GenerationStuck(format!("{a:?} outside layout")))?;
            total += row[idx];
            state.apply(a, &self.cfg.vocab)?;
        }
        Ok(total)
    }
}

/// Teacher-forced states for one gold action sequence, paired with the
/// gold action index in each state's layout.
pub fn teacher_states(start: &PartialGraph, actions: &[Action], vocab: &[AttachItem], latent_row: usize) -> Result<Vec<(StepInput, usize)>> {
    let mut state = start.clone();
    let mut out = Vec::with_capacity(actions.len());
    for &a in actions {
        let step = StepInput::new(&state, vocab, latent_row);
        let idx = step
            .layout
            .index(a)
            .filter(|&i| step.legal[i])
            .ok_or_else(|| TrexError::GenerationStuck(format!("gold action {a:?} is illegal")))?;
        out.push((step, idx));
        state.apply(a, vocab)?;
    }
    Ok(out)
}

/// Negative log-likelihood of the gold actions (sum over steps).
pub fn completion_loss(t: &mut Tape, scores: &StepScores, gold: &[usize]) -> Var {
    let at: Vec<(usize, usize)> = scores.offsets.iter().zip(gold).map(|(&o, &g)| (0, o + g)).collect();
    let picked = t.pick(scores.logp, &at);
    let s = t.sum_all(picked);
    t.scale(s, -1.0)
}
