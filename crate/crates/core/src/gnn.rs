//! Relational graph convolution shared by both stages.
//!
//! Layer `l` computes `Ag_k ReLU((V_k + I) h^{l-1} W_k^l)` over the bond
//! types `k`, without bias terms. Graphs are batched as disjoint unions.

use ndarray::{concatenate, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::graph::MolecularGraph;
use crate::error::{Result, TrexError};
use crate::nn::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
    Concat,
}

impl std::str::FromStr for Aggregation {
    type Err = TrexError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "concat" => Ok(Aggregation::Concat),
            other => Err(TrexError::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnSpec {
    pub input_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bond_types: usize,
    pub agg: Aggregation,
}

impl RgcnSpec {
    /// Width of the final node embeddings.
    pub fn output_width(&self) -> usize {
        match self.agg {
            Aggregation::Concat => self.hidden * self.bond_types,
            _ => self.hidden,
        }
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_width
        } else {
            self.output_width()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RgcnParams {
    pub spec: RgcnSpec,
    /// `weights[l][k]` is `W_k^{l+1}`.
    pub weights: Vec<Vec<ParamId>>,
}

impl RgcnParams {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: RgcnSpec, rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..spec.layers)
            .map(|l| {
                (0..spec.bond_types)
                    .map(|k| store.insert_uniform(&format!("{prefix}.l{l}.k{k}"), spec.layer_input(l), spec.hidden, rng))
                    .collect()
            })
            .collect();
        RgcnParams { spec, weights }
    }

    pub fn bind(store: &ParamStore, prefix: &str, spec: RgcnSpec) -> Result<Self> {
        let mut weights = Vec::new();
        for l in 0..spec.layers {
            let mut row = Vec::new();
            for k in 0..spec.bond_types {
                let name = format!("{prefix}.l{l}.k{k}");
                let id = store
                    .id(&name)
                    .ok_or_else(|| TrexError::Checkpoint(format!("missing tensor {name}")))?;
                if store.get(id).dim() != (spec.layer_input(l), spec.hidden) {
                    return Err(TrexError::ShapeMismatch(format!("{name} has shape {:?}", store.get(id).dim())));
                }
                row.push(id);
            }
            weights.push(row);
        }
        Ok(RgcnParams { spec, weights })
    }
}

/// Several graphs merged into one block-diagonal graph. Each graph belongs
/// to a group; readout sums per group.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub e: Array2<f64>,
    /// Per bond type, per node: neighbor indices in the merged graph.
    pub adj: Vec<Vec<Vec<usize>>>,
    /// Group index of every node.
    pub group: Vec<usize>,
    pub groups: usize,
    /// First merged-node index of each input graph, in input order.
    pub offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn single(g: &MolecularGraph) -> Self {
        Self::from_groups(&[vec![g]])
    }

    pub fn from_graphs(graphs: &[&MolecularGraph]) -> Self {
        let groups: Vec<Vec<&MolecularGraph>> = graphs.iter().map(|g| vec![*g]).collect();
        Self::from_groups(&groups)
    }

    pub fn from_groups(groups: &[Vec<&MolecularGraph>]) -> Self {
        let b = groups
            .iter()
            .flatten()
            .map(|g| g.b)
            .next()
            .unwrap_or(crate::chem::BondOrder::COUNT);
        let total: usize = groups.iter().flatten().map(|g| g.n).sum();
        let mut adj = vec![vec![Vec::new(); total]; b];
        let mut group = Vec::with_capacity(total);
        let mut offsets = Vec::new();
        let mut feats = Vec::new();
        let mut off = 0;
        for (gi, members) in groups.iter().enumerate() {
            for g in members {
                offsets.push(off);
                for (k, layer) in adj.iter_mut().enumerate() {
                    for (i, nbrs) in g.type_adjacency(k).iter().enumerate() {
                        layer[off + i].extend(nbrs.iter().map(|j| j + off));
                    }
                }
                group.extend(std::iter::repeat_n(gi, g.n));
                feats.push(g.e.view());
                off += g.n;
            }
        }
        let d = groups.iter().flatten().map(|g| g.d()).next().unwrap_or(0);
        let e = if feats.is_empty() {
            Array2::zeros((0, d))
        } else {
            concatenate(Axis(0), &feats).expect("feature widths must agree")
        };
        GraphBatch {
            e,
            adj,
            group,
            groups: groups.len(),
            offsets,
        }
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn d(&self) -> usize {
        self.e.ncols()
    }
}

/// Node embeddings `h^L` for every node of the batch.
pub fn rgcn_forward(t: &mut Tape, p: &RgcnParams, batch: &GraphBatch, input: Var) -> Result<Var> {
    let (_, d) = t.shape(input);
    if d != p.spec.input_width {
        return Err(TrexError::ShapeMismatch(format!(
            "node features have width {d}, encoder expects {}",
            p.spec.input_width
        )));
    }
    if batch.adj.len() != p.spec.bond_types {
        return Err(TrexError::ShapeMismatch(format!(
            "graph has {} bond types, encoder expects {}",
            batch.adj.len(),
            p.spec.bond_types
        )));
    }
    let mut h = input;
    for layer in &p.weights {
        let branches: Vec<Var> = layer
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let prop = t.propagate(h, &batch.adj[k]);
                let wv = t.param(w);
                let m = t.matmul(prop, wv);
                t.relu(m)
            })
            .collect();
        h = match p.spec.agg {
            Aggregation::Concat => t.concat_cols(&branches),
            agg => {
                let mut acc = branches[0];
                for &br in &branches[1..] {
                    acc = t.add(acc, br);
                }
                if agg == Aggregation::Mean {
                    acc = t.scale(acc, 1.0 / branches.len() as f64);
                }
                acc
            }
        };
    }
    Ok(h)
}

/// Sum of node embeddings per group (`groups × width`).
pub fn graph_readout(t: &mut Tape, h: Var, batch: &GraphBatch) -> Var {
    t.segment_sum(h, &batch.group, batch.groups)
}

/// Tape-free convenience for a single graph: `(h^L, readout)`.
pub fn encode_graph(store: &ParamStore, p: &RgcnParams, g: &MolecularGraph) -> Result<(Array2<f64>, Array2<f64>)> {
    let batch = GraphBatch::single(g);
    let mut t = Tape::new(store);
    let x = t.constant(batch.e.clone());
    let h = rgcn_forward(&mut t, p, &batch, x)?;
    let r = graph_readout(&mut t, h, &batch);
    Ok((t.value(h).clone(), t.value(r).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::graph::FeatureSchema;
    use crate::nn::seeded_rng;
    use approx::assert_abs_diff_eq;

    fn spec(agg: Aggregation) -> RgcnSpec {
        RgcnSpec {
            input_width: FeatureSchema::default().width(),
            hidden: 8,
            layers: 3,
            bond_types: 4,
            agg,
        }
    }

    fn graph(s: &str) -> MolecularGraph {
        MolecularGraph::from_smiles(s, &FeatureSchema::default()).unwrap()
    }

    #[test]
    fn output_shapes() {
        for agg in [Aggregation::Sum, Aggregation::Mean, Aggregation::Concat] {
            let mut store = ParamStore::new();
            let p = RgcnParams::new(&mut store, "g", spec(agg), &mut seeded_rng(1));
            let (h, r) = encode_graph(&store, &p, &graph("CC(=O)O")).unwrap();
            assert_eq!(h.dim(), (4, p.spec.output_width()));
            assert_eq!(r.dim(), (1, p.spec.output_width()));
            assert_eq!(p.weights.iter().flatten().count(), 3 * 4);
        }
    }

    #[test]
    fn single_atom_uses_self_loop_only() {
        let mut store = ParamStore::new();
        let mut sp = spec(Aggregation::Sum);
        sp.layers = 1;
        let p = RgcnParams::new(&mut store, "g", sp, &mut seeded_rng(2));
        let g = graph("O");
        let (h, _) = encode_graph(&store, &p, &g).unwrap();
        let mut expected = Array2::<f64>::zeros((1, 8));
        for &w in &p.weights[0] {
            expected += &g.e.dot(store.get(w)).mapv(|x| x.max(0.0));
        }
        for (a, b) in h.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::new();
        let p = RgcnParams::new(&mut store, "g", spec(Aggregation::Sum), &mut seeded_rng(3));
        store.zero_all();
        let (h, _) = encode_graph(&store, &p, &graph("c1ccccc1O")).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn readout_sums_rows() {
        let mut store = ParamStore::new();
        let p = RgcnParams::new(&mut store, "g", spec(Aggregation::Sum), &mut seeded_rng(4));
        let (h, r) = encode_graph(&store, &p, &graph("CCN")).unwrap();
        let s = h.sum_axis(Axis(0));
        for (a, b) in r.iter().zip(s.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn batching_matches_separate_runs() {
        let mut store = ParamStore::new();
        let p = RgcnParams::new(&mut store, "g", spec(Aggregation::Mean), &mut seeded_rng(5));
        let (a, b) = (graph("CCO"), graph("c1ccncc1"));
        let batch = GraphBatch::from_graphs(&[&a, &b]);
        let mut t = Tape::new(&store);
        let x = t.constant(batch.e.clone());
        let h = rgcn_forward(&mut t, &p, &batch, x).unwrap();
        let r = graph_readout(&mut t, h, &batch);
        let (_, ra) = encode_graph(&store, &p, &a).unwrap();
        let (_, rb) = encode_graph(&store, &p, &b).unwrap();
        let merged = t.value(r);
        for j in 0..merged.ncols() {
            assert_abs_diff_eq!(merged[[0, j]], ra[[0, j]], epsilon = 1e-10);
            assert_abs_diff_eq!(merged[[1, j]], rb[[0, j]], epsilon = 1e-10);
        }
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let mut sp = spec(Aggregation::Sum);
        sp.input_width = 5;
        let p = RgcnParams::new(&mut store, "g", sp, &mut seeded_rng(6));
        assert!(matches!(
            encode_graph(&store, &p, &graph("CC")),
            Err(TrexError::ShapeMismatch(_))
        ));
    }
}
