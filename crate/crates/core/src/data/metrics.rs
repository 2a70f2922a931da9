//! Top-k exact-match accuracy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chem::canon::{reactant_set_key, Canonicalizer};
use crate::error::Result;

/// One evaluated product: gold reactants and ranked predicted sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub record_id: String,
    pub reaction_type: Option<u8>,
    pub gold: Vec<String>,
    /// `None` when the model produced nothing for this record.
    pub predictions: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub k: usize,
    pub stereo: bool,
    pub overall: f64,
    pub per_type: BTreeMap<String, TypeAccuracy>,
    pub n_records: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

/// 1-based rank of the first prediction whose reactant multiset equals gold.
pub fn gold_rank(item: &EvalItem, canon: &dyn Canonicalizer, stereo: bool) -> Result<Option<usize>> {
    let Some(preds) = &item.predictions else {
        log::warn!("{}: no prediction, counted incorrect", item.record_id);
        return Ok(None);
    };
    let gold = reactant_set_key(canon, &item.gold, stereo)?;
    for (i, p) in preds.iter().enumerate() {
        match reactant_set_key(canon, p, stereo) {
            Ok(key) if key == gold => return Ok(Some(i + 1)),
            Ok(_) => {}
            Err(e) => log::debug!("{}: unreadable prediction {}: {e}", item.record_id, i + 1),
        }
    }
    Ok(None)
}

impl AccuracyReport {
    /// From precomputed `(type, gold rank)` pairs.
    pub fn from_ranks(ranks: &[(Option<u8>, Option<usize>)], k: usize, stereo: bool, group_by_type: bool) -> Self {
        let hit = |r: &Option<usize>| r.is_some_and(|r| r <= k);
        let n = ranks.len();
        let correct = ranks.iter().filter(|(_, r)| hit(r)).count();
        let mut per_type = BTreeMap::new();
        if group_by_type {
            let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for (t, r) in ranks {
                let key = t.map_or_else(|| "unknown".to_string(), |t| t.to_string());
                let e = tally.entry(key).or_default();
                e.0 += hit(r) as usize;
                e.1 += 1;
            }
            per_type = tally
                .into_iter()
                .map(|(t, (c, s))| {
                    (
                        t,
                        TypeAccuracy {
                            accuracy: c as f64 / s as f64,
                            support: s,
                        },
                    )
                })
                .collect();
        }
        AccuracyReport {
            k,
            stereo,
            overall: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            per_type,
            n_records: n,
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

pub fn topk_exact_match(items: &[EvalItem], k: usize, stereo: bool, group_by_type: bool, canon: &dyn Canonicalizer) -> Result<AccuracyReport> {
    let ranks = items
        .iter()
        .map(|it| Ok((it.reaction_type, gold_rank(it, canon, stereo)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyReport::from_ranks(&ranks, k, stereo, group_by_type))
}

pub fn write_reports_json(path: &Path, reports: &[AccuracyReport]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

/// One row per report and type; `type` is `all` for the overall row.
pub fn write_reports_csv(path: &Path, reports: &[AccuracyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["label", "k", "stereo", "type", "accuracy", "support"]).map_err(csv_err)?;
    for r in reports {
        let (k, st) = (r.k.to_string(), r.stereo.to_string());
        w.write_record([&r.label, &k, &st, "all", &format!("{:.6}", r.overall), &r.n_records.to_string()])
            .map_err(csv_err)?;
        for (t, a) in &r.per_type {
            w.write_record([&r.label, &k, &st, t, &format!("{:.6}", a.accuracy), &a.support.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::TrexError {
    crate::error::TrexError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::canon::BuiltinCanonicalizer;
    use proptest::prelude::*;

    const GOLD: [&str; 2] = ["CC(=O)Cl", "NC"];
    const WRONG: [[&str; 2]; 5] = [
        ["CC(=O)O", "NC"],
        ["CC(=O)Br", "NC"],
        ["CC(=O)Cl", "NCC"],
        ["CC", "O=CNC"],
        ["CC(=O)I", "CN"],
    ];

    /// Gold placed at `rank` (1-based) among five predictions, or absent.
    fn item(i: usize, rank: Option<usize>, rtype: u8) -> EvalItem {
        let mut preds: Vec<Vec<String>> = WRONG.iter().map(|w| w.iter().map(|s| s.to_string()).collect()).collect();
        if let Some(r) = rank {
            // Reordered and differently written, still the same multiset.
            preds[r - 1] = vec!["CN".into(), "ClC(C)=O".into()];
        }
        EvalItem {
            record_id: format!("r{i}"),
            reaction_type: Some(rtype),
            gold: GOLD.iter().map(|s| s.to_string()).collect(),
            predictions: Some(preds),
        }
    }

    fn hand_built() -> Vec<EvalItem> {
        let ranks = [Some(1), Some(1), Some(2), Some(4), None, Some(1), Some(3), Some(2), Some(1), Some(5)];
        ranks.iter().enumerate().map(|(i, &r)| item(i, r, (i % 3) as u8 + 1)).collect()
    }

    #[test]
    fn hand_built_accuracies() {
        // Ranks [1,1,2,4,-,1,3,2,1,5]: four at rank 1; ranks <= 3 add 2,3,2;
        // ranks <= 5 add 4 and 5.
        let items = hand_built();
        let acc = |k| topk_exact_match(&items, k, false, false, &BuiltinCanonicalizer).unwrap().overall;
        assert_eq!(acc(1), 0.4);
        assert_eq!(acc(3), 0.7);
        assert_eq!(acc(5), 0.9);
        assert_eq!(acc(10), 0.9);
    }

    #[test]
    fn missing_prediction_counts_wrong() {
        let mut items = vec![item(0, Some(1), 1)];
        items.push(EvalItem {
            predictions: None,
            ..item(1, Some(1), 1)
        });
        let r = topk_exact_match(&items, 1, false, true, &BuiltinCanonicalizer).unwrap();
        assert_eq!(r.overall, 0.5);
        assert_eq!(r.per_type["1"].support, 2);
    }

    #[test]
    fn stereo_matching_is_stricter() {
        let it = EvalItem {
            record_id: "s".into(),
            reaction_type: None,
            gold: vec!["C[C@H](N)O".into(), "CCl".into()],
            predictions: Some(vec![vec!["CC(N)O".into(), "CCl".into()]]),
        };
        let c = &BuiltinCanonicalizer;
        assert_eq!(topk_exact_match(std::slice::from_ref(&it), 1, false, false, c).unwrap().overall, 1.0);
        assert_eq!(topk_exact_match(&[it], 1, true, false, c).unwrap().overall, 0.0);
    }

    #[test]
    fn csv_and_json_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let r = topk_exact_match(&hand_built(), 3, false, true, &BuiltinCanonicalizer)
            .unwrap()
            .with_label("a→b, pre");
        write_reports_csv(&dir.path().join("r.csv"), std::slice::from_ref(&r)).unwrap();
        write_reports_json(&dir.path().join("r.json"), std::slice::from_ref(&r)).unwrap();
        let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 1 + 3);
        assert!(text.contains("\"a→b, pre\",3,false,all,0.700000,10"));
        let back: Vec<AccuracyReport> = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(back[0], r);
    }

    fn ranks_strategy() -> impl Strategy<Value = Vec<(Option<u8>, Option<usize>)>> {
        prop::collection::vec((prop::option::of(1u8..=10), prop::option::of(1usize..=12)), 1..60)
    }

    proptest! {
        #[test]
        fn monotone_in_k(ranks in ranks_strategy()) {
            let mut last = 0.0;
            for k in 1..=12 {
                let a = AccuracyReport::from_ranks(&ranks, k, false, false).overall;
                prop_assert!(a >= last);
                last = a;
            }
        }

        #[test]
        fn per_type_recomposes_overall(ranks in ranks_strategy(), k in 1usize..12) {
            let r = AccuracyReport::from_ranks(&ranks, k, false, true);
            let total: f64 = r.per_type.values().map(|t| t.accuracy * t.support as f64).sum::<f64>() / r.n_records as f64;
            prop_assert!((total - r.overall).abs() <= 1e-12);
        }

        #[test]
        fn order_within_cutoff_is_irrelevant(rank in prop::option::of(1usize..=5), k in 1usize..=5, seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let it = item(0, rank, 1);
            let mut shuffled = it.clone();
            let preds = shuffled.predictions.as_mut().unwrap();
            preds[..k].shuffle(&mut crate::nn::seeded_rng(seed));
            let c = &BuiltinCanonicalizer;
            prop_assert_eq!(
                topk_exact_match(&[it], k, false, false, c).unwrap().overall,
                topk_exact_match(&[shuffled], k, false, false, c).unwrap().overall
            );
        }
    }
}
