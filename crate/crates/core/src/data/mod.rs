//! Reaction corpora: loading, deduplication, splits and evaluation.

pub mod classifier;
pub mod metrics;
pub mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::chem::canon::{reactant_set_key, Canonicalizer};
use crate::chem::writer::write_smiles;
use crate::chem::{parse_reaction_record, FeatureSchema, ReactionRecord};
use crate::error::{Result, TrexError};
use crate::nn::seeded_rng;

pub use classifier::{predict_reaction_type, TypeClassifier, TypeFeatures};
pub use metrics::{gold_rank, topk_exact_match, AccuracyReport, EvalItem, TypeAccuracy};
pub use synthetic::synthetic_corpus;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Keep only reactions with exactly two reactants.
    pub two_reactants: bool,
    /// Drop records whose atom mapping fails [`ReactionRecord::check_mapping`].
    pub require_mapping: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub lines: usize,
    pub kept: usize,
    pub skipped: usize,
    pub filtered: usize,
    pub duplicates: usize,
}

/// Reactant SMILES of a record, maps included.
pub fn gold_reactants(rec: &ReactionRecord) -> Vec<String> {
    rec.reactants.iter().map(|r| write_smiles(&r.molecule)).collect()
}

/// Map-free identity `product>>reactant multiset`.
pub fn record_identity(rec: &ReactionRecord, canon: &dyn Canonicalizer) -> Result<String> {
    let p = canon.canonicalize(&write_smiles(&rec.product.molecule), true)?;
    let r = reactant_set_key(canon, &gold_reactants(rec), true)?;
    Ok(format!("{p}>>{r}"))
}

/// Parses `rxn[\ttype]` lines; `#` lines and blanks are ignored, bad lines
/// are logged and skipped, repeats of an earlier identity are dropped.
pub fn parse_lines<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    source: &str,
    opts: LoadOptions,
    canon: &dyn Canonicalizer,
) -> (Vec<ReactionRecord>, LoadReport) {
    let schema = FeatureSchema::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut rep = LoadReport::default();
    for (no, raw) in lines.into_iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rep.lines += 1;
        let mut cols = line.split('\t');
        let rxn = cols.next().unwrap_or_default();
        let rtype = match cols.next().map(str::trim).filter(|c| !c.is_empty()) {
            None => None,
            Some(c) => match c.parse::<u8>() {
                Ok(t) if (1..=10).contains(&t) => Some(t),
                _ => {
                    log::warn!("{source}:{}: bad reaction type `{c}`", no + 1);
                    rep.skipped += 1;
                    continue;
                }
            },
        };
        let id = format!("{source}:{}", no + 1);
        let rec = match parse_reaction_record(rxn, rtype, &id, &schema) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{id}: {e}");
                rep.skipped += 1;
                continue;
            }
        };
        if opts.two_reactants && rec.reactants.len() != 2 {
            rep.filtered += 1;
            continue;
        }
        if opts.require_mapping {
            if let Err(e) = rec.check_mapping() {
                log::warn!("{id}: {e}");
                rep.filtered += 1;
                continue;
            }
        }
        match record_identity(&rec, canon) {
            Ok(key) => {
                if seen.insert(key) {
                    out.push(rec);
                } else {
                    rep.duplicates += 1;
                }
            }
            Err(e) => {
                log::warn!("{id}: {e}");
                rep.skipped += 1;
            }
        }
    }
    rep.kept = out.len();
    log::info!(
        "{source}: {} lines, {} kept, {} skipped, {} filtered, {} duplicates",
        rep.lines,
        rep.kept,
        rep.skipped,
        rep.filtered,
        rep.duplicates
    );
    (out, rep)
}

pub fn load_reactions(path: &Path, opts: LoadOptions, canon: &dyn Canonicalizer) -> Result<(Vec<ReactionRecord>, LoadReport)> {
    let text = fs::read_to_string(path).map_err(|source| TrexError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let source = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    Ok(parse_lines(text.lines(), source, opts, canon))
}

/// Drops records whose identity occurs in `reference`.
pub fn exclude_overlap(records: Vec<ReactionRecord>, reference: &[ReactionRecord], canon: &dyn Canonicalizer) -> Result<Vec<ReactionRecord>> {
    let known: HashSet<String> = reference.iter().map(|r| record_identity(r, canon)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !known.contains(&record_identity(&r, canon)?) {
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ReactionRecord>,
    pub val: Vec<ReactionRecord>,
    pub test: Vec<ReactionRecord>,
    pub seed: u64,
    pub provenance: String,
}

/// Seeded shuffle, then contiguous 80/10/10 cut.
pub fn split_dataset(mut records: Vec<ReactionRecord>, seed: u64, provenance: &str) -> DatasetSplit {
    records.shuffle(&mut seeded_rng(seed));
    let n = records.len();
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let test = records.split_off((n_train + n_val).min(n));
    let val = records.split_off(n_train.min(records.len()));
    DatasetSplit {
        train: records,
        val,
        test,
        seed,
        provenance: provenance.to_string(),
    }
}

/// Training set for the incremental protocol: the source training records
/// plus the first `fraction` of the target's (seed-shuffled) training pool.
/// Evaluation stays on `target.test`.
pub fn incremental_train(source_train: &[ReactionRecord], target: &DatasetSplit, fraction: f64, seed: u64) -> Vec<ReactionRecord> {
    let mut pool = target.train.clone();
    pool.shuffle(&mut seeded_rng(seed));
    let take = ((pool.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut out = source_train.to_vec();
    out.extend(pool.into_iter().take(take));
    out
}
