//! Second-stage scoring of candidate reactant sets from reactant graphs and
//! pair descriptions.

use std::collections::HashMap;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::canon::{reactant_set_key, Canonicalizer};
use crate::chem::MolecularGraph;
use crate::completion::CandidateSet;
use crate::error::{Result, TrexError};
use crate::gnn::{graph_readout, rgcn_forward, GraphBatch, RgcnParams, RgcnSpec};
use crate::nn::{FeedForward, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub rgcn: RgcnSpec,
    /// Width of the pair text embedding; 0 drops the text block.
    pub text_width: usize,
    pub head_hidden: usize,
    pub alpha: f64,
}

impl RerankConfig {
    pub fn new(rgcn: RgcnSpec, text_width: usize) -> Self {
        RerankConfig {
            rgcn,
            text_width,
            head_hidden: 512,
            alpha: 0.2,
        }
    }

    /// `H_g ‖ H_t`.
    pub fn pair_width(&self) -> usize {
        self.rgcn.output_width() + self.text_width
    }
}

#[derive(Debug, Clone)]
pub struct RerankModel {
    pub cfg: RerankConfig,
    pub rgcn: RgcnParams,
    /// Square map applied to text embeddings before use; starts as identity.
    pub adapter: Option<ParamId>,
    pub head: FeedForward,
}

#[derive(Debug, Clone, Copy)]
pub struct RerankInput<'a> {
    pub reactants: &'a [MolecularGraph],
    pub text: &'a [f64],
}

pub struct RerankForward {
    pub logits: Var,
    /// Adapted text embeddings, one row per input (absent without text).
    pub text: Option<Var>,
    pub pair: Var,
}

impl RerankModel {
    pub fn new(store: &mut ParamStore, cfg: RerankConfig, rng: &mut ChaCha8Rng) -> Self {
        let rgcn = RgcnParams::new(store, "rerank.rgcn", cfg.rgcn.clone(), rng);
        let adapter = (cfg.text_width > 0).then(|| store.insert("rerank.adapter", Array2::eye(cfg.text_width)));
        let head = FeedForward::new(store, "rerank.ff", &[cfg.pair_width(), cfg.head_hidden, 2], rng);
        RerankModel {
            cfg,
            rgcn,
            adapter,
            head,
        }
    }

    pub fn bind(store: &ParamStore, cfg: RerankConfig) -> Result<Self> {
        let rgcn = RgcnParams::bind(store, "rerank.rgcn", cfg.rgcn.clone())?;
        let adapter = if cfg.text_width > 0 {
            let id = store
                .id("rerank.adapter")
                .ok_or_else(|| TrexError::Checkpoint("missing rerank adapter".into()))?;
            if store.get(id).dim() != (cfg.text_width, cfg.text_width) {
                return Err(TrexError::ShapeMismatch("rerank adapter shape".into()));
            }
            Some(id)
        } else {
            None
        };
        let head = FeedForward::bind(store, "rerank.ff", 2).ok_or_else(|| TrexError::Checkpoint("missing rerank head".into()))?;
        if head.input_width() != cfg.pair_width() {
            return Err(TrexError::ShapeMismatch(format!(
                "rerank head expects {}, config gives {}",
                head.input_width(),
                cfg.pair_width()
            )));
        }
        Ok(RerankModel {
            cfg,
            rgcn,
            adapter,
            head,
        })
    }

    /// Pair embeddings and two logits per input.
    pub fn forward(&self, t: &mut Tape, inputs: &[RerankInput]) -> Result<RerankForward> {
        for inp in inputs {
            if inp.text.len() != self.cfg.text_width {
                return Err(TrexError::ShapeMismatch(format!(
                    "pair text width {} but model expects {}",
                    inp.text.len(),
                    self.cfg.text_width
                )));
            }
            if inp.reactants.is_empty() {
                return Err(TrexError::ShapeMismatch("candidate has no reactants".into()));
            }
        }
        let groups: Vec<Vec<&MolecularGraph>> = inputs.iter().map(|i| i.reactants.iter().collect()).collect();
        let batch = GraphBatch::from_groups(&groups);
        let x = t.constant(batch.e.clone());
        let h = rgcn_forward(t, &self.rgcn, &batch, x)?;
        let hg = graph_readout(t, h, &batch);
        let (pair, text) = match self.adapter {
            Some(a) => {
                let w = self.cfg.text_width;
                let raw = Array2::from_shape_fn((inputs.len(), w), |(r, c)| inputs[r].text[c]);
                let raw = t.constant(raw);
                let av = t.param(a);
                let ht = t.matmul(raw, av);
                (t.concat_cols(&[hg, ht]), Some(ht))
            }
            None => (hg, None),
        };
        let logits = self.head.forward(t, pair);
        Ok(RerankForward { logits, text, pair })
    }

    /// `H_g ‖ H_t` for one candidate.
    pub fn embed_pair(&self, store: &ParamStore, input: RerankInput) -> Result<Vec<f64>> {
        let mut t = Tape::new(store);
        let f = self.forward(&mut t, &[input])?;
        Ok(t.value(f.pair).iter().copied().collect())
    }

    /// `(a_minus, a_plus)` per input.
    pub fn score_pairs(&self, store: &ParamStore, inputs: &[RerankInput]) -> Result<Vec<(f64, f64)>> {
        let mut t = Tape::new(store);
        let f = self.forward(&mut t, inputs)?;
        Ok(t.value(f.logits).rows().into_iter().map(|r| softmax2(r[0], r[1])).collect())
    }
}

pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

/// Summed cross-entropy on the two-way softmax plus `α` times the
/// cosine-similarity contrastive term over the text rows of the batch.
pub fn rerank_loss(t: &mut Tape, logits: Var, text: Option<Var>, labels: &[bool], alpha: f64) -> Var {
    let ls = t.log_softmax_rows(logits, None);
    let at: Vec<(usize, usize)> = labels.iter().enumerate().map(|(i, &y)| (i, y as usize)).collect();
    let picked = t.pick(ls, &at);
    let ce = t.sum_all(picked);
    let ce = t.scale(ce, -1.0);
    match text {
        Some(ht) if alpha != 0.0 => {
            let c = contrastive_term(t, ht);
            let c = t.scale(c, alpha);
            t.add(ce, c)
        }
        _ => ce,
    }
}

/// `−Σ_i Σ_{j≠i} log softmax_j(cos(H_i, ·))`, denominator over all rows.
pub fn contrastive_term(t: &mut Tape, ht: Var) -> Var {
    let m = t.shape(ht).0;
    let n = t.row_normalize(ht);
    let sim = t.matmul_t(n, n);
    let ls = t.log_softmax_rows(sim, None);
    let at: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    if at.is_empty() {
        return t.constant(Array2::zeros((1, 1)));
    }
    let picked = t.pick(ls, &at);
    let s = t.sum_all(picked);
    t.scale(s, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    Generated,
    GroundTruthAugmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankExample {
    pub set_id: String,
    pub product: String,
    pub reactants: Vec<String>,
    pub label: bool,
    pub source: ExampleSource,
    pub stage1_score: f64,
}

/// Gold reactants per product id: `(product smiles, reactant smiles)`.
pub type GoldTable = HashMap<String, (String, Vec<String>)>;

/// Labels each candidate by multiset match with the gold reactants and adds
/// the gold set as an extra positive when none matched.
pub fn build_rerank_trainset(candsets: &[CandidateSet], gold: &GoldTable, canon: &dyn Canonicalizer) -> Result<Vec<RerankExample>> {
    let mut out = Vec::new();
    for set in candsets {
        let (product, gold_reactants) = gold
            .get(&set.product_id)
            .ok_or_else(|| TrexError::MissingGold(set.product_id.clone()))?;
        let gold_key = reactant_set_key(canon, gold_reactants, false)?;
        let mut any = false;
        for c in &set.items {
            let label = reactant_set_key(canon, &c.reactants, false)? == gold_key;
            any |= label;
            out.push(RerankExample {
                set_id: set.product_id.clone(),
                product: product.clone(),
                reactants: c.reactants.clone(),
                label,
                source: ExampleSource::Generated,
                stage1_score: c.score,
            });
        }
        if !any {
            out.push(RerankExample {
                set_id: set.product_id.clone(),
                product: product.clone(),
                reactants: gold_reactants.clone(),
                label: true,
                source: ExampleSource::GroundTruthAugmented,
                stage1_score: f64::NEG_INFINITY,
            });
        }
    }
    Ok(out)
}

/// Candidate indices by `a_plus` descending, ties by stage-1 score
/// descending, then original position.
pub fn select_topk(stage1: &[f64], a_plus: &[f64], k_prime: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..stage1.len()).collect();
    idx.sort_by(|&a, &b| {
        a_plus[b]
            .total_cmp(&a_plus[a])
            .then(stage1[b].total_cmp(&stage1[a]))
            .then(a.cmp(&b))
    });
    idx.truncate(k_prime);
    idx
}

/// How re-ranking moved gold candidates that stage 1 ranked in its top 3.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub stage1_top1: usize,
    pub kept_top1: usize,
    pub stage1_rank2_3: usize,
    pub promoted_to_top1: usize,
}

impl RetentionStats {
    /// `ranks` holds `(stage-1 rank, final rank)` of the gold candidate
    /// (1-based) for each product where gold was generated.
    pub fn from_ranks(ranks: &[(usize, usize)]) -> Self {
        let mut s = RetentionStats::default();
        for &(before, after) in ranks {
            if before == 1 {
                s.stage1_top1 += 1;
                s.kept_top1 += (after == 1) as usize;
            } else if before <= 3 {
                s.stage1_rank2_3 += 1;
                s.promoted_to_top1 += (after == 1) as usize;
            }
        }
        s
    }

    pub fn kept_fraction(&self) -> Option<f64> {
        (self.stage1_top1 > 0).then(|| self.kept_top1 as f64 / self.stage1_top1 as f64)
    }

    pub fn promoted_fraction(&self) -> Option<f64> {
        (self.stage1_rank2_3 > 0).then(|| self.promoted_to_top1 as f64 / self.stage1_rank2_3 as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::canon::BuiltinCanonicalizer;
    use crate::chem::FeatureSchema;
    use crate::completion::Candidate;
    use crate::gnn::Aggregation;
    use crate::nn::seeded_rng;
    use approx::assert_abs_diff_eq;

    fn cfg(text: usize) -> RerankConfig {
        let mut c = RerankConfig::new(
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
    fn widths() {
        let spec = RgcnSpec {
            input_width: 29,
            hidden: 512,
            layers: 4,
            bond_types: 4,
            agg: Aggregation::Sum,
        };
        assert_eq!(RerankConfig::new(spec, 1280).pair_width(), 1792);
    }

    #[test]
    fn embedding_blocks() {
        let mut store = ParamStore::new();
        let m = RerankModel::new(&mut store, cfg(3), &mut seeded_rng(1));
        let rs = [g("BrCc1ccccc1"), g("Oc1ccc(O)c(Br)c1")];
        let a = m.embed_pair(&store, RerankInput { reactants: &rs, text: &[1.0, 0.0, 2.0] }).unwrap();
        let b = m.embed_pair(&store, RerankInput { reactants: &rs, text: &[0.0, 1.0, 0.0] }).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a[..6], b[..6]);
        assert_ne!(a[6..], b[6..]);
        assert_eq!(&a[6..], &[1.0, 0.0, 2.0]);
        let one = m.embed_pair(&store, RerankInput { reactants: &rs[..1], text: &[1.0, 0.0, 2.0] }).unwrap();
        assert_ne!(one[..6], a[..6]);
    }

    #[test]
    fn scores_are_distributions() {
        let mut store = ParamStore::new();
        let m = RerankModel::new(&mut store, cfg(2), &mut seeded_rng(2));
        let rs = [g("CCO")];
        let s = m.score_pairs(&store, &[RerankInput { reactants: &rs, text: &[0.4, -2.0] }]).unwrap();
        assert_abs_diff_eq!(s[0].0 + s[0].1, 1.0, epsilon = 1e-12);
        for (w, b) in &m.head.layers {
            store.get_mut(*w).fill(0.0);
            store.get_mut(*b).fill(0.0);
        }
        let s = m.score_pairs(&store, &[RerankInput { reactants: &rs, text: &[0.4, -2.0] }]).unwrap();
        assert_eq!(s[0], (0.5, 0.5));
    }

    #[test]
    fn contrastive_closed_form() {
        let store = ParamStore::new();
        for m in [2usize, 3, 8] {
            let mut t = Tape::new(&store);
            let ht = t.constant(Array2::from_elem((m, 4), 0.7));
            let c = contrastive_term(&mut t, ht);
            let mf = m as f64;
            assert_abs_diff_eq!(t.scalar(c), mf * (mf - 1.0) * mf.ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn alpha_zero_is_cross_entropy() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let logits = t.constant(ndarray::array![[0.0, 1.0], [2.0, -1.0]]);
        let text = t.constant(ndarray::array![[1.0, 0.0], [0.0, 1.0]]);
        let l = rerank_loss(&mut t, logits, Some(text), &[true, true], 0.0);
        let p1 = softmax2(0.0, 1.0).1;
        let p2 = softmax2(2.0, -1.0).1;
        assert_abs_diff_eq!(t.scalar(l), -(p1.ln() + p2.ln()), epsilon = 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut store = ParamStore::new();
        let m = RerankModel::new(&mut store, cfg(3), &mut seeded_rng(4));
        let mut rng = seeded_rng(11);
        let a = m.adapter.unwrap();
        store.get_mut(a).mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        let g1 = [g("CC(=O)Cl"), g("OC")];
        let g2 = [g("c1ccccc1Br")];
        let g3 = [g("CCN"), g("O=C(O)C")];
        let texts = [[0.3, -1.0, 0.5], [0.9, 0.2, -0.4], [0.1, 0.8, 0.7]];
        let inputs = [
            RerankInput { reactants: &g1, text: &texts[0] },
            RerankInput { reactants: &g2, text: &texts[1] },
            RerankInput { reactants: &g3, text: &texts[2] },
        ];
        let labels = [true, false, true];
        let loss = |store: &ParamStore| {
            let mut t = Tape::new(store);
            let f = m.forward(&mut t, &inputs).unwrap();
            let l = rerank_loss(&mut t, f.logits, f.text, &labels, 0.2);
            (t.scalar(l), t.backward(l))
        };
        let (_, grads) = loss(&store);
        assert!(grads.get(a).is_some_and(|g| g.iter().any(|v| v.abs() > 1e-8)));
        for id in store.ids().collect::<Vec<_>>() {
            let len = store.get(id).len();
            for _ in 0..4 {
                let k = rng.random_range(0..len);
                let orig = store.get(id).as_slice().unwrap()[k];
                let h = 1e-6;
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
                let up = loss(&store).0;
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
                let down = loss(&store).0;
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(rel < 1e-4 || (num - ana).abs() < 1e-7, "{}[{k}]: {ana} vs {num}", store.name(id));
            }
        }
    }

    fn cand(r: &[&str], score: f64) -> Candidate {
        let reactants: Vec<String> = r.iter().map(|s| s.to_string()).collect();
        Candidate {
            center: (0, 1),
            key: reactants.join("."),
            reactants,
            score,
        }
    }

    #[test]
    fn trainset_labels_and_augmentation() {
        let mut gold = GoldTable::new();
        gold.insert("a".into(), ("CCOC".into(), vec!["CCO".into(), "CI".into()]));
        gold.insert("b".into(), ("CCOC".into(), vec!["CCO".into(), "CI".into()]));
        let sets = vec![
            CandidateSet {
                product_id: "a".into(),
                items: vec![cand(&["CCBr", "CO"], -1.0), cand(&["IC", "OCC"], -2.0), cand(&["CC", "COC"], -3.0)],
                k: 3,
            },
            CandidateSet {
                product_id: "b".into(),
                items: vec![cand(&["CCBr", "CO"], -1.0), cand(&["CC", "COC"], -2.0), cand(&["CCBr", "CO"], -3.0)],
                k: 3,
            },
        ];
        let ex = build_rerank_trainset(&sets, &gold, &BuiltinCanonicalizer).unwrap();
        let a: Vec<bool> = ex.iter().filter(|e| e.set_id == "a").map(|e| e.label).collect();
        assert_eq!(a, vec![false, true, false]);
        let b: Vec<&RerankExample> = ex.iter().filter(|e| e.set_id == "b").collect();
        assert_eq!(b.len(), 4);
        assert_eq!(b.iter().map(|e| e.label).collect::<Vec<_>>(), vec![false, false, false, true]);
        assert_eq!(b[3].source, ExampleSource::GroundTruthAugmented);
        assert_eq!(b[0].label, b[2].label);
        let missing = vec![CandidateSet {
            product_id: "zz".into(),
            items: vec![],
            k: 3,
        }];
        assert!(matches!(build_rerank_trainset(&missing, &gold, &BuiltinCanonicalizer), Err(TrexError::MissingGold(_))));
    }

    #[test]
    fn topk_ordering() {
        let s1 = [-1.0, -2.0, -3.0];
        assert_eq!(select_topk(&s1, &[0.2, 0.9, 0.5], 1), vec![1]);
        assert_eq!(select_topk(&s1, &[0.2, 0.9, 0.5], 10), vec![1, 2, 0]);
        assert_eq!(select_topk(&s1, &[0.5, 0.5, 0.5], 3), vec![0, 1, 2]);
    }

    #[test]
    fn retention_bookkeeping() {
        let s = RetentionStats::from_ranks(&[(1, 1), (1, 2), (2, 1), (3, 3), (4, 1)]);
        assert_eq!((s.stage1_top1, s.kept_top1, s.stage1_rank2_3, s.promoted_to_top1), (2, 1, 2, 1));
        assert_eq!(s.kept_fraction(), Some(0.5));
    }
}
