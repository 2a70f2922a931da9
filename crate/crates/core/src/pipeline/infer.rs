//! Single-product prediction and split evaluation.

use std::fs;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::context::TextContext;
use super::models::*;
use super::train::{candidate_sets, gold_table, load_split};
use crate::chem::canon::{canonicalizer_from_env, reactant_set_key, Canonicalizer};
use crate::chem::{FeatureSchema, MolecularGraph};
use crate::completion::CandidateSet;
use crate::config::RunConfig;
use crate::data::metrics::{write_reports_csv, write_reports_json};
use crate::data::{topk_exact_match, AccuracyReport, EvalItem};
use crate::error::{Result, TrexError};
use crate::rerank::{select_topk, RetentionStats};

pub const PRE_K: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub reactants: Vec<String>,
    pub stage1_rank: usize,
    pub stage1_score: f64,
    pub a_plus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub product_id: String,
    pub product: String,
    pub candidates: Vec<RankedCandidate>,
}

/// Stage-1 order, or the rerank order over all candidates when `a_plus`
/// is given.
fn ranked(set: &CandidateSet, product: &str, a_plus: Option<&[f64]>) -> Prediction {
    let stage1: Vec<f64> = set.items.iter().map(|c| c.score).collect();
    let order: Vec<usize> = match a_plus {
        Some(a) => select_topk(&stage1, a, set.items.len()),
        None => (0..set.items.len()).collect(),
    };
    Prediction {
        product_id: set.product_id.clone(),
        product: product.to_string(),
        candidates: order
            .into_iter()
            .enumerate()
            .map(|(r, i)| RankedCandidate {
                rank: r + 1,
                reactants: set.items[i].reactants.clone(),
                stage1_rank: i + 1,
                stage1_score: set.items[i].score,
                a_plus: a_plus.map(|a| a[i]),
            })
            .collect(),
    }
}

/// Loaded models of a run, reusable across predictions.
pub struct Predictor {
    cfg: RunConfig,
    canon: Arc<dyn Canonicalizer>,
    texts: TextContext,
    stage1: Stage1,
    rerank: Option<RerankStage>,
}

impl Predictor {
    /// Loads stage 1 and, when its checkpoint exists, the re-ranker.
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let canon = canonicalizer_from_env()?;
        let texts = TextContext::open(cfg, canon.clone())?;
        let stage1 = Stage1::load(cfg, texts.encoders())?;
        let rerank = if checkpoint_path(&cfg.run_dir, RERANK).exists() {
            Some(RerankStage::load(cfg, texts.encoders())?)
        } else {
            None
        };
        Ok(Predictor {
            cfg: cfg.clone(),
            canon,
            texts,
            stage1,
            rerank,
        })
    }

    pub fn predict(&mut self, product: &str, reaction_type: Option<u8>) -> Result<Prediction> {
        let g = MolecularGraph::from_smiles(product, &FeatureSchema::default())?;
        let canonical = self.canon.canonicalize(product, true)?;
        let text = self.texts.product_embedding(&canonical)?;
        let set = self
            .stage1
            .candidates("input", &g, &text, reaction_type, self.cfg.max_k(), self.canon.as_ref())?;
        let a_plus = match &self.rerank {
            Some(rr) => Some(rr.score(&canonical, &set.items, &mut self.texts)?),
            None => None,
        };
        Ok(ranked(&set, &canonical, a_plus.as_deref()))
    }
}

/// Ranked reactant sets for one product SMILES; the rerank stage is applied
/// when its checkpoint exists.
pub fn predict(cfg: &RunConfig, product: &str, reaction_type: Option<u8>) -> Result<Prediction> {
    Predictor::open(cfg)?.predict(product, reaction_type)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub tag: String,
    pub reports: Vec<AccuracyReport>,
    pub retention: Option<RetentionStats>,
}

/// Top-k exact match before and after reranking on the test split (the
/// cross-dataset test split when the run was ingested with one).
pub fn evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let canon = canonicalizer_from_env()?;
    let mut texts = TextContext::open(cfg, canon.clone())?;
    let cross = load_split(cfg, "cross_test", canon.as_ref())?;
    let (split, recs) = if cross.is_empty() {
        ("test", load_split(cfg, "test", canon.as_ref())?)
    } else {
        ("cross_test", cross)
    };
    if recs.is_empty() {
        return Err(TrexError::EmptySplit);
    }
    let tag = fs::read_to_string(cfg.run_dir.join("source.txt")).unwrap_or_else(|_| split.to_string());
    let stage1 = Stage1::load(cfg, texts.encoders())?;
    let k_max = cfg.max_k();
    let sets = candidate_sets(cfg, &stage1, &mut texts, &recs, k_max, canon.as_ref())?;
    let gold = gold_table(&recs, canon.as_ref())?;
    let group = recs.iter().any(|r| r.reaction_type.is_some());
    let items_at = |preds: &dyn Fn(usize) -> Vec<Vec<String>>| -> Vec<EvalItem> {
        recs.iter()
            .enumerate()
            .map(|(i, r)| EvalItem {
                record_id: r.record_id.clone(),
                reaction_type: r.reaction_type,
                gold: gold[&r.record_id].1.clone(),
                predictions: Some(preds(i)),
            })
            .collect()
    };

    let mut reports = Vec::new();
    let pre = items_at(&|i| sets[i].items.iter().map(|c| c.reactants.clone()).collect());
    for k in PRE_K {
        let rep = topk_exact_match(&pre, k, cfg.stereo, group, canon.as_ref())?;
        reports.push(rep.with_label("stage1"));
    }

    let rerank = if checkpoint_path(&cfg.run_dir, RERANK).exists() {
        Some(RerankStage::load(cfg, texts.encoders())?)
    } else {
        log::warn!("no rerank checkpoint in {}; reporting stage-1 accuracy only", cfg.run_dir.display());
        None
    };
    let mut retention = None;
    let mut predictions = Vec::with_capacity(sets.len());
    if let Some(rr) = &rerank {
        let mut a_plus = Vec::with_capacity(sets.len());
        for (r, s) in recs.iter().zip(&sets) {
            a_plus.push(rr.score(&gold[&r.record_id].0, &s.items, &mut texts)?);
        }
        for (k, kp) in cfg.eval_pairs()? {
            let post = items_at(&|i| {
                let n = k.min(sets[i].items.len());
                let stage1: Vec<f64> = sets[i].items[..n].iter().map(|c| c.score).collect();
                select_topk(&stage1, &a_plus[i][..n], kp)
                    .into_iter()
                    .map(|j| sets[i].items[j].reactants.clone())
                    .collect()
            });
            let rep = topk_exact_match(&post, kp, cfg.stereo, group, canon.as_ref())?;
            reports.push(rep.with_label(format!("rerank top-{k}")));
        }
        let mut ranks = Vec::new();
        for (i, s) in sets.iter().enumerate() {
            let want = reactant_set_key(canon.as_ref(), &gold[&recs[i].record_id].1, cfg.stereo)?;
            let mut before = None;
            for (j, c) in s.items.iter().enumerate() {
                if reactant_set_key(canon.as_ref(), &c.reactants, cfg.stereo)? == want {
                    before = Some(j);
                    break;
                }
            }
            let pred = ranked(s, &gold[&recs[i].record_id].0, Some(&a_plus[i]));
            if let Some(b) = before {
                let after = pred.candidates.iter().position(|c| c.stage1_rank == b + 1).expect("permutation");
                ranks.push((b + 1, after + 1));
            }
            predictions.push(pred);
        }
        retention = Some(RetentionStats::from_ranks(&ranks));
    } else {
        for (i, s) in sets.iter().enumerate() {
            predictions.push(ranked(s, &gold[&recs[i].record_id].0, None));
        }
    }

    let mut f = std::io::BufWriter::new(fs::File::create(cfg.run_dir.join("predictions.jsonl"))?);
    for p in &predictions {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let summary = EvalSummary {
        split: split.to_string(),
        tag,
        reports,
        retention,
    };
    write_reports_json(&cfg.run_dir.join("eval_reports.json"), &summary.reports)?;
    write_reports_csv(&cfg.run_dir.join("eval.csv"), &summary.reports)?;
    fs::write(cfg.run_dir.join("eval.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
