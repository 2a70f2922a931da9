//! Reaction-center scoring over product bonds.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::MolecularGraph;
use crate::error::{Result, TrexError};
use crate::gnn::{graph_readout, rgcn_forward, GraphBatch, RgcnParams, RgcnSpec};
use crate::nn::{FeedForward, ParamId, ParamStore, Tape, Var};

/// `(graph, i, j)` of an atom pair inside a batch.
pub type EdgeKey = (usize, usize, usize);

pub const TYPE_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterConfig {
    pub rgcn: RgcnSpec,
    pub head_hidden: usize,
    /// Width of the product text embedding; 0 disables the text block.
    pub text_width: usize,
    /// Reaction-type embedding width; 0 means the type is not known.
    pub type_width: usize,
    pub lambda: f64,
    pub eps: f64,
    pub loss_all_pairs: bool,
}

impl CenterConfig {
    pub fn new(rgcn: RgcnSpec, text_width: usize) -> Self {
        CenterConfig {
            rgcn,
            head_hidden: 512,
            text_width,
            type_width: 0,
            lambda: 20.0,
            eps: 1e-7,
            loss_all_pairs: false,
        }
    }

    /// `h_i ‖ h_j ‖ V_ij ‖ H_g ‖ H_t ‖ type`.
    pub fn edge_width(&self) -> usize {
        let s = self.rgcn.output_width();
        2 * s + self.rgcn.bond_types + s + self.text_width + self.type_width
    }
}

#[derive(Debug, Clone)]
pub struct CenterModel {
    pub cfg: CenterConfig,
    pub rgcn: RgcnParams,
    pub head: FeedForward,
    pub type_table: Option<ParamId>,
}

/// One product to score.
#[derive(Debug, Clone, Copy)]
pub struct CenterInput<'a> {
    pub graph: &'a MolecularGraph,
    pub text: &'a [f64],
    /// Reaction class in `1..=10`.
    pub rtype: Option<u8>,
}

/// Symmetric probabilities over product bonds.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterScores {
    pub r: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl CenterScores {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[[i, j]]
    }
}

/// Probabilities for a batch: one row per unordered pair, in `pairs` order.
pub struct CenterForward {
    pub probs: Var,
    /// `(input index, i, j)` with `i < j`.
    pub pairs: Vec<EdgeKey>,
}

impl CenterModel {
    pub fn new(store: &mut ParamStore, cfg: CenterConfig, rng: &mut ChaCha8Rng) -> Self {
        let rgcn = RgcnParams::new(store, "center.rgcn", cfg.rgcn.clone(), rng);
        let head = FeedForward::new(store, "center.ff", &[cfg.edge_width(), cfg.head_hidden, 1], rng);
        let type_table =
            (cfg.type_width > 0).then(|| store.insert_uniform("center.type", TYPE_CLASSES, cfg.type_width, rng));
        CenterModel {
            cfg,
            rgcn,
            head,
            type_table,
        }
    }

    pub fn bind(store: &ParamStore, cfg: CenterConfig) -> Result<Self> {
        let rgcn = RgcnParams::bind(store, "center.rgcn", cfg.rgcn.clone())?;
        let head = FeedForward::bind(store, "center.ff", 2)
            .ok_or_else(|| TrexError::Checkpoint("missing center head".into()))?;
        if head.input_width() != cfg.edge_width() {
            return Err(TrexError::ShapeMismatch(format!(
                "center head expects width {}, config gives {}",
                head.input_width(),
                cfg.edge_width()
            )));
        }
        let type_table = if cfg.type_width > 0 {
            Some(
                store
                    .id("center.type")
                    .ok_or_else(|| TrexError::Checkpoint("missing type table".into()))?,
            )
        } else {
            None
        };
        Ok(CenterModel {
            cfg,
            rgcn,
            head,
            type_table,
        })
    }

    fn check(&self, input: &CenterInput) -> Result<()> {
        if input.text.len() != self.cfg.text_width {
            return Err(TrexError::ShapeMismatch(format!(
                "text embedding width {} but model expects {}",
                input.text.len(),
                self.cfg.text_width
            )));
        }
        match (self.type_table.is_some(), input.rtype) {
            (true, None) => Err(TrexError::ShapeMismatch("model is type-conditioned but no type given".into())),
            (true, Some(t)) if !(1..=TYPE_CLASSES as u8).contains(&t) => {
                Err(TrexError::ShapeMismatch(format!("reaction type {t} outside 1..=10")))
            }
            _ => Ok(()),
        }
    }

    /// Edge embedding rows. The first half holds every pair in `(i, j)`
    /// order, the second half the same pairs in `(j, i)` order.
    pub fn edge_embeddings(
        &self,
        t: &mut Tape,
        inputs: &[CenterInput],
        all_pairs: bool,
    ) -> Result<(Var, Vec<EdgeKey>)> {
        for inp in inputs {
            self.check(inp)?;
        }
        let graphs: Vec<&MolecularGraph> = inputs.iter().map(|x| x.graph).collect();
        let batch = GraphBatch::from_graphs(&graphs);
        let x = t.constant(batch.e.clone());
        let h = rgcn_forward(t, &self.rgcn, &batch, x)?;
        let hg = graph_readout(t, h, &batch);

        let mut pairs = Vec::new();
        for (p, g) in graphs.iter().enumerate() {
            if all_pairs {
                for i in 0..g.n {
                    for j in i + 1..g.n {
                        pairs.push((p, i, j));
                    }
                }
            } else {
                pairs.extend(g.bonded_pairs().into_iter().map(|(i, j)| (p, i.min(j), i.max(j))));
            }
        }
        let m = pairs.len();
        let mut first = Vec::with_capacity(2 * m);
        let mut second = Vec::with_capacity(2 * m);
        for &(p, i, j) in &pairs {
            first.push(batch.offsets[p] + i);
            second.push(batch.offsets[p] + j);
        }
        for k in 0..m {
            first.push(second[k]);
            second.push(first[k]);
        }
        let b = self.cfg.rgcn.bond_types;
        let owner: Vec<usize> = (0..2 * m).map(|r| pairs[r % m].0).collect();
        let v = Array2::from_shape_fn((2 * m, b), |(r, k)| {
            let (p, i, j) = pairs[r % m];
            graphs[p].v(i, j, k) as f64
        });

        let hi = t.gather_rows(h, &first);
        let hj = t.gather_rows(h, &second);
        let vv = t.constant(v);
        let hgr = t.gather_rows(hg, &owner);
        let mut parts = vec![hi, hj, vv, hgr];
        if self.cfg.text_width > 0 {
            let w = self.cfg.text_width;
            let ht = Array2::from_shape_fn((2 * m, w), |(r, c)| inputs[owner[r]].text[c]);
            parts.push(t.constant(ht));
        }
        if let Some(table) = self.type_table {
            let tab = t.param(table);
            let idx: Vec<usize> = owner
                .iter()
                .map(|&p| inputs[p].rtype.map(|x| x as usize - 1).unwrap_or(0))
                .collect();
            parts.push(t.gather_rows(tab, &idx));
        }
        Ok((t.concat_cols(&parts), pairs))
    }

    /// Sigmoid scores averaged over the two orientations of each pair.
    pub fn forward(&self, t: &mut Tape, inputs: &[CenterInput], all_pairs: bool) -> Result<CenterForward> {
        let (edges, pairs) = self.edge_embeddings(t, inputs, all_pairs)?;
        let m = pairs.len();
        let logits = self.head.forward(t, edges);
        let p = t.sigmoid(logits);
        let fwd: Vec<usize> = (0..m).collect();
        let rev: Vec<usize> = (m..2 * m).collect();
        let a = t.gather_rows(p, &fwd);
        let b = t.gather_rows(p, &rev);
        let s = t.add(a, b);
        let probs = t.scale(s, 0.5);
        Ok(CenterForward { probs, pairs })
    }

    /// Tape-free scoring of one product.
    pub fn score_centers(&self, store: &ParamStore, input: CenterInput) -> Result<CenterScores> {
        let mut t = Tape::new(store);
        let f = self.forward(&mut t, &[input], false)?;
        let n = input.graph.n;
        let mut r = Array2::zeros((n, n));
        let vals = t.value(f.probs);
        let mut pairs = Vec::with_capacity(f.pairs.len());
        for (k, &(_, i, j)) in f.pairs.iter().enumerate() {
            r[[i, j]] = vals[[k, 0]];
            r[[j, i]] = vals[[k, 0]];
            pairs.push((i, j));
        }
        Ok(CenterScores { r, pairs })
    }
}

/// Weighted binary cross-entropy over ordered pairs. `probs` holds one
/// symmetric score per unordered pair, so each term counts twice.
pub fn center_loss(t: &mut Tape, probs: Var, labels: &[f64], lambda: f64, eps: f64) -> Var {
    let l = t.bce_probs(probs, labels, lambda, eps);
    t.scale(l, 2.0)
}

/// Labels aligned with `CenterForward::pairs`.
pub fn pair_labels(pairs: &[(usize, usize, usize)], centers: &[Vec<(usize, usize)>]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(p, i, j)| {
            if centers[p].iter().any(|&(a, b)| (a.min(b), a.max(b)) == (i, j)) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Pairs by descending score, ties by `(min, max)` ascending.
pub fn rank_centers(scores: &CenterScores, top_n: usize) -> Vec<((usize, usize), f64)> {
    let mut v: Vec<((usize, usize), f64)> = scores
        .pairs
        .iter()
        .map(|&(i, j)| ((i.min(j), i.max(j)), scores.get(i, j)))
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(top_n.max(1));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::FeatureSchema;
    use crate::gnn::Aggregation;
    use crate::nn::seeded_rng;
    use approx::assert_abs_diff_eq;

    fn small_cfg(text: usize) -> CenterConfig {
        let mut c = CenterConfig::new(
            RgcnSpec {
                input_width: FeatureSchema::default().width(),
                hidden: 6,
                layers: 2,
                bond_types: 4,
                agg: Aggregation::Sum,
            },
            text,
        );
        c.head_hidden = 5;
        c
    }

    fn g(s: &str) -> MolecularGraph {
        MolecularGraph::from_smiles(s, &FeatureSchema::default()).unwrap()
    }

    #[test]
    fn paper_scale_edge_widths() {
        let spec = RgcnSpec {
            input_width: 29,
            hidden: 512,
            layers: 4,
            bond_types: 4,
            agg: Aggregation::Sum,
        };
        let mut c = CenterConfig::new(spec, 1280);
        assert_eq!(c.edge_width(), 2 * 512 + 4 + 512 + 1280);
        c.type_width = 64;
        assert_eq!(c.edge_width(), 2 * 512 + 4 + 512 + 1280 + 64);
    }

    #[test]
    fn ethane_has_one_pair() {
        let mut store = ParamStore::new();
        let m = CenterModel::new(&mut store, small_cfg(3), &mut seeded_rng(1));
        let eth = g("CC");
        let text = [0.1, 0.2, 0.3];
        let mut t = Tape::new(&store);
        let (e, pairs) = m
            .edge_embeddings(&mut t, &[CenterInput { graph: &eth, text: &text, rtype: None }], false)
            .unwrap();
        assert_eq!(pairs, vec![(0, 0, 1)]);
        assert_eq!(t.shape(e), (2, m.cfg.edge_width()));
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut store = ParamStore::new();
        let m = CenterModel::new(&mut store, small_cfg(0), &mut seeded_rng(2));
        for (w, b) in &m.head.layers {
            store.get_mut(*w).fill(0.0);
            store.get_mut(*b).fill(0.0);
        }
        let mol = g("CC(=O)Oc1ccccc1");
        let s = m.score_centers(&store, CenterInput { graph: &mol, text: &[], rtype: None }).unwrap();
        for &(i, j) in &s.pairs {
            assert_eq!(s.get(i, j), 0.5);
        }
    }

    #[test]
    fn scores_are_symmetric_probabilities() {
        let mut store = ParamStore::new();
        let m = CenterModel::new(&mut store, small_cfg(2), &mut seeded_rng(3));
        let mol = g("Oc1ccc(OCc2ccccc2)c(Br)c1");
        let s = m.score_centers(&store, CenterInput { graph: &mol, text: &[1.0, -1.0], rtype: None }).unwrap();
        assert_eq!(s.pairs.len(), mol.molecule.bonds.len());
        for &(i, j) in &s.pairs {
            assert_eq!(s.get(i, j), s.get(j, i));
            assert!(s.get(i, j) > 0.0 && s.get(i, j) < 1.0);
        }
    }

    #[test]
    fn loss_closed_form() {
        // one positive unordered pair among m/2, all r = 0.5
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let unordered = 7;
        let p = t.constant(Array2::from_elem((unordered, 1), 0.5));
        let mut labels = vec![0.0; unordered];
        labels[3] = 1.0;
        let l = center_loss(&mut t, p, &labels, 20.0, 1e-7);
        let m = 2.0 * unordered as f64;
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(t.scalar(l), 20.0 * ln2 * 2.0 + (m - 2.0) * ln2, epsilon = 1e-9);
    }

    #[test]
    fn perfect_prediction_loss_vanishes() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let p = t.constant(Array2::from_shape_vec((3, 1), vec![1.0, 0.0, 0.0]).unwrap());
        let l = center_loss(&mut t, p, &[1.0, 0.0, 0.0], 20.0, 1e-12);
        assert!(t.scalar(l) < 1e-9);
    }

    #[test]
    fn ranking_and_ties() {
        let mut r = Array2::zeros((4, 4));
        for &((i, j), v) in &[((0, 1), 0.2), ((1, 2), 0.9), ((2, 3), 0.5)] {
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
        let s = CenterScores {
            r,
            pairs: vec![(0, 1), (1, 2), (2, 3)],
        };
        let ranked: Vec<_> = rank_centers(&s, 10).into_iter().map(|x| x.0).collect();
        assert_eq!(ranked, vec![(1, 2), (2, 3), (0, 1)]);
        let flat = CenterScores {
            r: Array2::from_elem((4, 4), 0.3),
            pairs: vec![(2, 3), (0, 1), (1, 2)],
        };
        let ranked: Vec<_> = rank_centers(&flat, 2).into_iter().map(|x| x.0).collect();
        assert_eq!(ranked, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn type_conditioning_requires_type() {
        let mut store = ParamStore::new();
        let mut cfg = small_cfg(0);
        cfg.type_width = 4;
        let m = CenterModel::new(&mut store, cfg, &mut seeded_rng(4));
        let mol = g("CCO");
        assert!(m.score_centers(&store, CenterInput { graph: &mol, text: &[], rtype: None }).is_err());
        assert!(m.score_centers(&store, CenterInput { graph: &mol, text: &[], rtype: Some(3) }).is_ok());
        assert!(m.score_centers(&store, CenterInput { graph: &mol, text: &[], rtype: Some(11) }).is_err());
    }

    #[test]
    fn bind_round_trip() {
        let mut store = ParamStore::new();
        let m = CenterModel::new(&mut store, small_cfg(2), &mut seeded_rng(5));
        let again = CenterModel::bind(&store, m.cfg.clone()).unwrap();
        let mol = g("CCN");
        let inp = CenterInput { graph: &mol, text: &[0.0, 1.0], rtype: None };
        assert_eq!(m.score_centers(&store, inp).unwrap(), again.score_centers(&store, inp).unwrap());
    }
}
