//! Joins per-synthon completions into ranked reactant sets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::beam::Completion;
use crate::chem::canon::Canonicalizer;
use crate::chem::writer::write_smiles;
use crate::chem::{extract_synthons, FeatureSchema, MolecularGraph, Synthon};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub center: (usize, usize),
    /// Canonical SMILES of each reactant, sorted.
    pub reactants: Vec<String>,
    /// Reactants joined by `.`; identity of the candidate.
    pub key: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub product_id: String,
    pub items: Vec<Candidate>,
    pub k: usize,
}

/// For each center: split, complete every synthon, combine completions with
/// score `ln r + Σ log p`, keep the best score per reactant set, sort and
/// truncate to `k`. Centers whose synthons yield no completion are skipped.
pub fn generate_candidates(
    product_id: &str,
    product: &MolecularGraph,
    centers: &[((usize, usize), f64)],
    complete: &dyn Fn(&Synthon) -> Result<Vec<Completion>>,
    canon: &dyn Canonicalizer,
    stereo: bool,
    k: usize,
) -> Result<CandidateSet> {
    let schema = FeatureSchema::default();
    let mut best: HashMap<String, Candidate> = HashMap::new();
    for &(center, prob) in centers {
        let synthons = extract_synthons(product, center, &schema)?;
        let mut options: Vec<Vec<(String, f64)>> = Vec::new();
        for s in &synthons {
            let mut opts = Vec::new();
            for c in complete(s)? {
                match canon.canonicalize(&write_smiles(&c.molecule), stereo) {
                    Ok(smi) => opts.push((smi, c.log_prob)),
                    Err(e) => log::debug!("dropping unreadable completion: {e}"),
                }
            }
            options.push(opts);
        }
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        let base = prob.max(f64::MIN_POSITIVE).ln();
        let mut combos: Vec<(Vec<String>, f64)> = vec![(Vec::new(), base)];
        for opts in &options {
            combos = combos
                .iter()
                .flat_map(|(acc, sc)| {
                    opts.iter().map(move |(smi, lp)| {
                        let mut v = acc.clone();
                        v.push(smi.clone());
                        (v, sc + lp)
                    })
                })
                .collect();
        }
        for (mut reactants, score) in combos {
            reactants.sort();
            let key = reactants.join(".");
            let better = best.get(&key).is_none_or(|c| score > c.score);
            if better {
                best.insert(
                    key.clone(),
                    Candidate {
                        center,
                        reactants,
                        key,
                        score,
                    },
                );
            }
        }
    }
    let mut items: Vec<Candidate> = best.into_values().collect();
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
    items.truncate(k);
    Ok(CandidateSet {
        product_id: product_id.to_string(),
        items,
        k,
    })
}
