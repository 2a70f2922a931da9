//! Ingestion, description prefetch and the three training loops.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::context::TextContext;
use super::models::*;
use crate::center::{center_loss, pair_labels, rank_centers, CenterConfig, CenterInput, CenterModel};
use crate::chem::canon::{canonical_molecule, canonicalizer_from_env, Canonicalizer};
use crate::chem::writer::write_smiles;
use crate::chem::{derive_center_labels, extract_synthons, FeatureSchema, MolecularGraph, ReactionRecord};
use crate::completion::{
    beam_search, build_vocab, completion_loss, derive_actions, teacher_states, AttachItem, CandidateSet, CompletionConfig,
    CompletionModel, ModelPolicy, PartialGraph, StepInput,
};
use crate::config::{ReactionClassMode, RunConfig, Stage};
use crate::data::classifier::TypeSample;
use crate::data::{
    exclude_overlap, gold_reactants, incremental_train, load_reactions, predict_reaction_type, split_dataset, LoadOptions,
    TypeClassifier, TypeFeatures,
};
use crate::error::{Result, TrexError};
use crate::nn::{seeded_rng, Adam, AdamConfig, Gradients, ParamStore, Tape};
use crate::rerank::{build_rerank_trainset, rerank_loss, select_topk, GoldTable, RerankConfig, RerankInput, RerankModel};
use crate::text::{DescriptionKey, PromptId};

pub const SPLITS: [&str; 4] = ["train", "val", "test", "cross_test"];

fn split_path(run_dir: &Path, name: &str) -> PathBuf {
    run_dir.join(format!("{name}.txt"))
}

fn write_records(path: &Path, recs: &[ReactionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in recs {
        out.push_str(&r.rxn_smiles);
        if let Some(t) = r.reaction_type {
            out.push_str(&format!("\t{t}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Records of a split written by [`ingest`]; an absent file is an empty split.
pub fn load_split(cfg: &RunConfig, name: &str, canon: &dyn Canonicalizer) -> Result<Vec<ReactionRecord>> {
    let path = split_path(&cfg.run_dir, name);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(|source| TrexError::FileUnreadable { path: path.clone(), source })?;
    Ok(crate::data::parse_lines(text.lines(), name, LoadOptions::default(), canon).0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub source: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub cross_test: usize,
}

/// Loads, deduplicates and splits the configured corpus into the run directory.
pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let canon = canonicalizer_from_env()?;
    let path = cfg
        .data
        .path
        .as_deref()
        .ok_or_else(|| TrexError::Config("data.path is required".into()))?;
    let opts = LoadOptions {
        two_reactants: cfg.data.two_reactants,
        require_mapping: true,
    };
    let (mut recs, _) = load_reactions(path, opts, canon.as_ref())?;
    if cfg.data.limit > 0 {
        recs.truncate(cfg.data.limit);
    }
    let source = stem(path);
    let all = recs.clone();
    let mut split = split_dataset(recs, cfg.data.split_seed, &source);
    let mut summary = IngestSummary {
        source: source.clone(),
        ..Default::default()
    };
    fs::create_dir_all(&cfg.run_dir)?;
    if let Some(cross) = cfg.data.cross_path.as_deref() {
        let (other, _) = load_reactions(cross, opts, canon.as_ref())?;
        let other = exclude_overlap(other, &all, canon.as_ref())?;
        let target = split_dataset(other, cfg.data.split_seed, &stem(cross));
        if cfg.data.incremental > 0.0 {
            split.train = incremental_train(&split.train, &target, cfg.data.incremental, cfg.data.split_seed);
        }
        write_records(&split_path(&cfg.run_dir, "cross_test"), &target.test)?;
        summary.cross_test = target.test.len();
        summary.source = format!("{source}→{}", stem(cross));
    } else {
        let _ = fs::remove_file(split_path(&cfg.run_dir, "cross_test"));
    }
    write_records(&split_path(&cfg.run_dir, "train"), &split.train)?;
    write_records(&split_path(&cfg.run_dir, "val"), &split.val)?;
    write_records(&split_path(&cfg.run_dir, "test"), &split.test)?;
    fs::write(cfg.run_dir.join("run.conf"), cfg.to_text())?;
    fs::write(cfg.run_dir.join("source.txt"), &summary.source)?;
    summary.train = split.train.len();
    summary.val = split.val.len();
    summary.test = split.test.len();
    Ok(summary)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string()
}

fn product_smiles(rec: &ReactionRecord) -> String {
    write_smiles(&rec.product.molecule)
}

/// Map-free canonical gold reactants.
fn gold_canonical(rec: &ReactionRecord, canon: &dyn Canonicalizer) -> Result<Vec<String>> {
    gold_reactants(rec).iter().map(|s| canon.canonicalize(s, true)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescribeScope {
    Products,
    Candidates,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeSummary {
    pub requested: usize,
    pub failed: usize,
    pub cached: usize,
}

/// Fills the description cache for every product (or every stage-1
/// candidate pair plus the gold pair) of the run's splits.
pub fn describe(cfg: &RunConfig, scope: DescribeScope) -> Result<DescribeSummary> {
    let canon = canonicalizer_from_env()?;
    let mut texts = TextContext::open(cfg, canon.clone())?;
    let mut keys: Vec<(PromptId, DescriptionKey)> = Vec::new();
    let mut splits = Vec::new();
    for name in SPLITS {
        splits.push((name, load_split(cfg, name, canon.as_ref())?));
    }
    match scope {
        DescribeScope::Products => {
            for (_, recs) in &splits {
                for r in recs {
                    keys.push((PromptId::Product, texts.product_key(&product_smiles(r))?));
                }
            }
        }
        DescribeScope::Candidates => {
            let stage1 = Stage1::load(cfg, texts.encoders())?;
            let k = cfg.train_k.max(cfg.max_k());
            for (name, recs) in &splits {
                let sets = candidate_sets(cfg, &stage1, &mut texts, recs, k, canon.as_ref())?;
                log::info!("{name}: {} candidate sets", sets.len());
                for (r, set) in recs.iter().zip(&sets) {
                    let p = product_smiles(r);
                    keys.push((PromptId::Pair, texts.pair_key(&p, &gold_canonical(r, canon.as_ref())?)?));
                    for c in &set.items {
                        keys.push((PromptId::Pair, texts.pair_key(&p, &c.reactants)?));
                    }
                }
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    keys.retain(|k| seen.insert(k.clone()));
    let failed = texts.ensure(&keys)?;
    Ok(DescribeSummary {
        requested: keys.len(),
        failed,
        cached: texts.cached(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub best_epoch: usize,
    pub best_val: f64,
    pub rows: Vec<EpochRow>,
}

fn write_metrics(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrexError::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| TrexError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn check_finite(loss: f64, grads: &Gradients, epoch: usize, step: usize, what: &str) -> Result<()> {
    if loss.is_finite() && grads.all_finite() {
        return Ok(());
    }
    Err(TrexError::NonFiniteLoss {
        epoch,
        step,
        detail: format!("{what}: loss {loss}, gradient norm {}", grads.global_norm()),
    })
}

/// Keeps the best validation epoch's checkpoint and the metric rows.
struct Tracker {
    kind: &'static str,
    rows: Vec<EpochRow>,
    best: Option<(usize, f64)>,
}

impl Tracker {
    fn new(kind: &'static str) -> Self {
        Tracker {
            kind,
            rows: Vec::new(),
            best: None,
        }
    }

    /// Records an epoch; returns true when it is the new best.
    fn push(&mut self, row: EpochRow) -> bool {
        let better = self.best.is_none_or(|(_, b)| row.val_metric > b);
        if better {
            self.best = Some((row.epoch, row.val_metric));
        }
        log::info!(
            "{} epoch {}: loss {:.5}, val {:.4}{}",
            self.kind,
            row.epoch,
            row.train_loss,
            row.val_metric,
            if better { " *" } else { "" }
        );
        self.rows.push(row);
        better
    }

    fn finish(self, cfg: &RunConfig) -> Result<StageOutcome> {
        let metrics = metrics_path(&cfg.run_dir, self.kind);
        write_metrics(&metrics, &self.rows)?;
        let (best_epoch, best_val) = self.best.unwrap_or((0, 0.0));
        Ok(StageOutcome {
            stage: self.kind.to_string(),
            checkpoint: checkpoint_path(&cfg.run_dir, self.kind),
            metrics,
            best_epoch,
            best_val,
            rows: self.rows,
        })
    }
}

fn adam(cfg: &RunConfig, store: &ParamStore, lr: f64, epochs: usize, batches: usize) -> Adam {
    Adam::new(AdamConfig::new(lr, cfg.weight_decay, epochs * batches, cfg.warmup), store)
}

pub fn train_stage(cfg: &RunConfig, stage: Stage) -> Result<Vec<StageOutcome>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.run_dir)?;
    match stage {
        Stage::Center => Ok(vec![train_center(cfg)?]),
        Stage::Completion => Ok(vec![train_completion(cfg)?]),
        Stage::Rerank => Ok(vec![train_rerank(cfg)?]),
        Stage::Pipeline => Ok(vec![train_center(cfg)?, train_completion(cfg)?, train_rerank(cfg)?]),
    }
}

struct CenterExample {
    graph: MolecularGraph,
    text: Arc<Vec<f64>>,
    rtype: Option<u8>,
    centers: Vec<(usize, usize)>,
}

fn center_examples(recs: &[ReactionRecord], texts: &mut TextContext, mode: ReactionClassMode) -> Result<Vec<CenterExample>> {
    let mut out = Vec::with_capacity(recs.len());
    for r in recs {
        let centers = match derive_center_labels(r) {
            Ok(l) => l.centers(),
            Err(e) => {
                log::warn!("{}: {e}", r.record_id);
                continue;
            }
        };
        if centers.is_empty() {
            log::debug!("{}: no bond center, skipped", r.record_id);
            continue;
        }
        if mode != ReactionClassMode::None && r.reaction_type.is_none() {
            return Err(TrexError::Config(format!("{}: reaction type required in this mode", r.record_id)));
        }
        out.push(CenterExample {
            graph: r.product.clone(),
            text: texts.product_embedding(&product_smiles(r))?,
            rtype: if mode == ReactionClassMode::None { None } else { r.reaction_type },
            centers,
        });
    }
    Ok(out)
}

/// Fraction of examples whose top-ranked pair is a gold center.
fn center_accuracy(model: &CenterModel, store: &ParamStore, examples: &[CenterExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in examples {
        let s = model.score_centers(
            store,
            CenterInput {
                graph: &ex.graph,
                text: &ex.text,
                rtype: ex.rtype,
            },
        )?;
        if let Some(&((i, j), _)) = rank_centers(&s, 1).first() {
            hits += ex.centers.iter().any(|&(a, b)| (a.min(b), a.max(b)) == (i, j)) as usize;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

fn train_center(cfg: &RunConfig) -> Result<StageOutcome> {
    let canon = canonicalizer_from_env()?;
    let mut texts = TextContext::open(cfg, canon.clone())?;
    let train = center_examples(&load_split(cfg, "train", canon.as_ref())?, &mut texts, cfg.reaction_class)?;
    let val = center_examples(&load_split(cfg, "val", canon.as_ref())?, &mut texts, cfg.reaction_class)?;
    if train.is_empty() {
        return Err(TrexError::EmptySplit.in_stage(CENTER));
    }
    let val_ref = if val.is_empty() { &train } else { &val };
    let mut ccfg = CenterConfig::new(rgcn_spec(cfg), texts.width());
    ccfg.head_hidden = cfg.model.head_hidden;
    ccfg.lambda = cfg.lambda;
    ccfg.loss_all_pairs = cfg.loss_all_pairs;
    ccfg.type_width = if cfg.reaction_class == ReactionClassMode::None { 0 } else { cfg.model.type_width };
    let meta = ModelMeta {
        config: ccfg.clone(),
        encoders: texts.encoders().to_string(),
        reaction_class: cfg.reaction_class,
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let model = CenterModel::new(&mut store, ccfg, &mut rng);
    let batch = cfg.batch.center;
    let mut opt = adam(cfg, &store, cfg.lr.stage1, cfg.epochs.center, train.len().div_ceil(batch));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut track = Tracker::new(CENTER);
    for epoch in 1..=cfg.epochs.center {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let lr = opt.current_lr();
        for (step, chunk) in order.chunks(batch).enumerate() {
            let inputs: Vec<CenterInput> = chunk
                .iter()
                .map(|&i| CenterInput {
                    graph: &train[i].graph,
                    text: &train[i].text,
                    rtype: train[i].rtype,
                })
                .collect();
            let centers: Vec<Vec<(usize, usize)>> = chunk.iter().map(|&i| train[i].centers.clone()).collect();
            let (loss, mut grads) = {
                let mut t = Tape::new(&store);
                let f = model.forward(&mut t, &inputs, cfg.loss_all_pairs)?;
                let labels = pair_labels(&f.pairs, &centers);
                let l = center_loss(&mut t, f.probs, &labels, model.cfg.lambda, model.cfg.eps);
                (t.scalar(l), t.backward(l))
            };
            check_finite(loss, &grads, epoch, step, CENTER)?;
            total += loss;
            opt.step(&mut store, &mut grads);
        }
        let val_metric = center_accuracy(&model, &store, val_ref)?;
        let row = EpochRow {
            epoch,
            train_loss: total / train.len() as f64,
            val_metric,
            lr,
        };
        if track.push(row) {
            save_model(&cfg.run_dir, CENTER, cfg.seed, &meta, &store)?;
        }
    }
    let outcome = track.finish(cfg)?;
    if cfg.reaction_class == ReactionClassMode::Predicted {
        train_type_classifier(cfg, &mut texts, canon.as_ref())?;
    }
    Ok(outcome)
}

/// Product-graph plus product-text classifier on the frozen center encoder.
fn train_type_classifier(cfg: &RunConfig, texts: &mut TextContext, canon: &dyn Canonicalizer) -> Result<StageOutcome> {
    let (cm, center_store) = load_model::<CenterConfig>(&cfg.run_dir, CENTER, texts.encoders())?;
    let center = CenterModel::bind(&center_store, cm.config)?;
    let samples = |recs: Vec<ReactionRecord>, texts: &mut TextContext| -> Result<Vec<TypeSample>> {
        let mut v = Vec::new();
        for r in recs {
            let Some(label) = r.reaction_type else { continue };
            let product = crate::gnn::encode_graph(&center_store, &center.rgcn, &r.product)?.1.into_iter().collect();
            let text = texts.product_embedding(&product_smiles(&r))?.to_vec();
            v.push(TypeSample {
                product,
                text: Some(text),
                reactants: None,
                label,
            });
        }
        Ok(v)
    };
    let train = samples(load_split(cfg, "train", canon)?, texts)?;
    let val = samples(load_split(cfg, "val", canon)?, texts)?;
    if train.is_empty() {
        return Err(TrexError::EmptySplit.in_stage(TYPES));
    }
    let mut rng = seeded_rng(cfg.seed.wrapping_add(7));
    let mut store = ParamStore::new();
    let features = TypeFeatures::ProductText;
    let g = center.rgcn.spec.output_width();
    let clf = TypeClassifier::new(&mut store, features, g, texts.width(), cfg.model.head_hidden, &mut rng);
    let curve = clf.train(&mut store, &train, cfg.epochs.center, cfg.batch.center, cfg.lr.stage1, &mut rng)?;
    let eval = if val.is_empty() { &train } else { &val };
    let mut hits = 0;
    for s in eval {
        hits += (predict_reaction_type(&clf, &store, &s.product, s.text.as_deref(), None)?.0 == s.label) as usize;
    }
    let acc = hits as f64 / eval.len() as f64;
    let meta = ModelMeta {
        config: TypeMeta {
            features,
            hidden: cfg.model.head_hidden,
        },
        encoders: texts.encoders().to_string(),
        reaction_class: cfg.reaction_class,
    };
    save_model(&cfg.run_dir, TYPES, cfg.seed, &meta, &store)?;
    let mut track = Tracker::new(TYPES);
    let last = curve.len();
    for (e, loss) in curve.into_iter().enumerate() {
        track.push(EpochRow {
            epoch: e + 1,
            train_loss: loss,
            val_metric: if e + 1 == last { acc } else { f64::NAN },
            lr: cfg.lr.stage1,
        });
    }
    track.best = Some((last, acc));
    track.finish(cfg)
}

struct SynthonExample {
    start: PartialGraph,
    steps: Vec<(StepInput, usize)>,
    product: usize,
    gold: String,
}

/// Synthons of single-center records with their gold growth sequences.
fn synthon_examples(
    recs: &[ReactionRecord],
    vocab: &mut Vec<AttachItem>,
    grow_vocab: bool,
) -> (Vec<SynthonExample>, Vec<usize>) {
    let schema = FeatureSchema::default();
    let mut out = Vec::new();
    let mut used = Vec::new();
    for (ri, r) in recs.iter().enumerate() {
        let Ok(labels) = derive_center_labels(r) else { continue };
        let Some(center) = labels.single_center() else {
            log::debug!("{}: not a single-bond center, skipped for completion", r.record_id);
            continue;
        };
        let Ok(synthons) = extract_synthons(&r.product, center, &schema) else { continue };
        let mut exs = Vec::new();
        let mut ok = true;
        for s in &synthons {
            let map = r.product.atom_maps[s.origin_atoms[0]];
            let Some(reactant) = r.reactants.iter().find(|g| g.atom_maps.contains(&map)) else {
                ok = false;
                break;
            };
            let actions = derive_actions(s, &r.product, reactant, |it| match vocab.iter().position(|x| *x == it) {
                Some(p) => Some(p),
                None if grow_vocab => {
                    vocab.push(it);
                    Some(vocab.len() - 1)
                }
                None => None,
            });
            let actions = match actions {
                Ok(a) => a,
                Err(e) => {
                    log::debug!("{}: {e}", r.record_id);
                    ok = false;
                    break;
                }
            };
            let mut gm = reactant.molecule.clone();
            gm.strip_maps();
            exs.push((PartialGraph::from_synthon(s), actions, canonical_molecule(&gm, true)));
        }
        if !ok {
            continue;
        }
        for (start, actions, gold) in exs {
            out.push((start, actions, gold, ri));
        }
        used.push(ri);
    }
    let examples = out
        .into_iter()
        .filter_map(|(start, actions, gold, ri)| {
            let steps = teacher_states(&start, &actions, vocab, 0).ok()?;
            Some(SynthonExample {
                start,
                steps,
                product: ri,
                gold,
            })
        })
        .collect();
    (examples, used)
}

/// Greedy completions that reproduce the gold reactant exactly.
fn exact_synthon_rate(model: &CompletionModel, store: &ParamStore, examples: &[SynthonExample], readouts: &[Vec<f64>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for ex in examples {
        let policy = ModelPolicy {
            model,
            store,
            readout: &readouts[ex.product],
        };
        let best = beam_search(&policy, ex.start.clone(), 1)?;
        if best.first().is_some_and(|c| canonical_molecule(&c.molecule, true) == ex.gold) {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

fn train_completion(cfg: &RunConfig) -> Result<StageOutcome> {
    let canon = canonicalizer_from_env()?;
    let encoders = TextContext::open(cfg, canon.clone())?.encoders().to_string();
    let (cm, center_store) = load_model::<CenterConfig>(&cfg.run_dir, CENTER, &encoders).map_err(|e| e.in_stage(COMPLETION))?;
    let center = CenterModel::bind(&center_store, cm.config)?;
    let train_recs = load_split(cfg, "train", canon.as_ref())?;
    let val_recs = load_split(cfg, "val", canon.as_ref())?;
    let readouts = |recs: &[ReactionRecord]| -> Result<Vec<Vec<f64>>> {
        recs.iter()
            .map(|r| Ok(crate::gnn::encode_graph(&center_store, &center.rgcn, &r.product)?.1.into_iter().collect()))
            .collect()
    };
    let mut vocab = build_vocab([]);
    synthon_examples(&train_recs, &mut vocab, true);
    let vocab = build_vocab(vocab);
    let mut fixed = vocab.clone();
    let (train, _) = synthon_examples(&train_recs, &mut fixed, false);
    let (val, _) = synthon_examples(&val_recs, &mut fixed, false);
    if train.is_empty() {
        return Err(TrexError::EmptySplit.in_stage(COMPLETION));
    }
    let train_readouts = readouts(&train_recs)?;
    let val_readouts = readouts(&val_recs)?;
    let ccfg = CompletionConfig {
        rgcn: rgcn_spec(cfg),
        product_width: center.rgcn.spec.output_width(),
        latent_width: cfg.model.latent,
        hidden: cfg.model.head_hidden,
        vocab,
        max_actions: cfg.model.max_actions,
    };
    let meta = ModelMeta {
        config: ccfg.clone(),
        encoders,
        reaction_class: cfg.reaction_class,
    };
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut store = ParamStore::new();
    let model = CompletionModel::new(&mut store, ccfg, &mut rng);

    // batches are drawn over products so both synthons of a product share one
    let mut by_product: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in train.iter().enumerate() {
        by_product.entry(ex.product).or_default().push(i);
    }
    let mut products: Vec<usize> = by_product.keys().copied().collect();
    let batch = cfg.batch.completion;
    let mut opt = adam(cfg, &store, cfg.lr.stage1, cfg.epochs.completion, products.len().div_ceil(batch));
    let (val_ex, val_ro) = if val.is_empty() { (&train, &train_readouts) } else { (&val, &val_readouts) };
    let mut track = Tracker::new(COMPLETION);
    let width = train_readouts[0].len();
    for epoch in 1..=cfg.epochs.completion {
        products.shuffle(&mut rng);
        let mut total = 0.0;
        let lr = opt.current_lr();
        for (step, chunk) in products.chunks(batch).enumerate() {
            let mut ro = ndarray::Array2::zeros((chunk.len(), width));
            let mut inputs = Vec::new();
            let mut gold = Vec::new();
            for (row, p) in chunk.iter().enumerate() {
                ro.row_mut(row).assign(&ndarray::ArrayView1::from(&train_readouts[*p]));
                for &ei in &by_product[p] {
                    for (st, g) in &train[ei].steps {
                        let mut st = st.clone();
                        st.latent_row = row;
                        inputs.push(st);
                        gold.push(*g);
                    }
                }
            }
            let (loss, mut grads) = {
                let mut t = Tape::new(&store);
                let r = t.constant(ro);
                let z = model.latent(&mut t, r);
                let sc = model.step_scores(&mut t, &inputs, z)?;
                let l = completion_loss(&mut t, &sc, &gold);
                (t.scalar(l), t.backward(l))
            };
            check_finite(loss, &grads, epoch, step, COMPLETION)?;
            total += loss;
            opt.step(&mut store, &mut grads);
        }
        let val_metric = exact_synthon_rate(&model, &store, val_ex, val_ro)?;
        let row = EpochRow {
            epoch,
            train_loss: total / products.len() as f64,
            val_metric,
            lr,
        };
        if track.push(row) {
            save_model(&cfg.run_dir, COMPLETION, cfg.seed, &meta, &store)?;
        }
    }
    track.finish(cfg)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CandidateCache {
    fingerprint: String,
    sets: BTreeMap<String, CandidateSet>,
}

fn stage1_fingerprint(cfg: &RunConfig) -> Result<String> {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    for kind in [CENTER, COMPLETION, TYPES] {
        let p = checkpoint_path(&cfg.run_dir, kind);
        if p.exists() {
            h.write(&fs::read(p)?);
        }
    }
    h.write(format!("{}|{}|{:?}", cfg.beam, cfg.centers, cfg.reaction_class).as_bytes());
    Ok(format!("{:016x}", h.finish()))
}

/// Stage-1 candidate sets (top `k`) for `recs`, reusing the run's candidate
/// cache when the stage-1 checkpoints are unchanged.
pub fn candidate_sets(
    cfg: &RunConfig,
    stage1: &Stage1,
    texts: &mut TextContext,
    recs: &[ReactionRecord],
    k: usize,
    canon: &dyn Canonicalizer,
) -> Result<Vec<CandidateSet>> {
    let path = cfg.run_dir.join("candidates.json");
    let fingerprint = stage1_fingerprint(cfg)?;
    let mut cache: CandidateCache = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .filter(|c: &CandidateCache| c.fingerprint == fingerprint)
        .unwrap_or_else(|| CandidateCache {
            fingerprint,
            sets: BTreeMap::new(),
        });
    let mut dirty = false;
    let mut out = Vec::with_capacity(recs.len());
    for r in recs {
        let key = format!("{}|{}", r.record_id, product_smiles(r));
        if let Some(s) = cache.sets.get(&key).filter(|s| s.k >= k) {
            let mut s = s.clone();
            s.items.truncate(k);
            s.k = k;
            out.push(s);
            continue;
        }
        let text = texts.product_embedding(&product_smiles(r))?;
        let set = stage1.candidates(&r.record_id, &r.product, &text, r.reaction_type, k, canon)?;
        cache.sets.insert(key, set.clone());
        dirty = true;
        out.push(set);
    }
    if dirty {
        fs::write(&path, serde_json::to_vec(&cache)?)?;
    }
    Ok(out)
}

/// Gold table keyed by record id, canonical and map-free.
pub fn gold_table(recs: &[ReactionRecord], canon: &dyn Canonicalizer) -> Result<GoldTable> {
    let mut g = HashMap::new();
    for r in recs {
        let p = canon.canonicalize(&product_smiles(r), true)?;
        g.insert(r.record_id.clone(), (p, gold_canonical(r, canon)?));
    }
    Ok(g)
}

struct PairExample {
    graphs: Vec<MolecularGraph>,
    text: Arc<Vec<f64>>,
    label: bool,
}

/// Post-rerank top-1 over `sets`.
fn rerank_top1(
    model: &RerankModel,
    store: &ParamStore,
    sets: &[CandidateSet],
    gold: &GoldTable,
    texts: &mut TextContext,
    canon: &dyn Canonicalizer,
    stereo: bool,
) -> Result<f64> {
    if sets.is_empty() {
        return Ok(0.0);
    }
    let stage = RerankStage {
        model: model.clone(),
        store: store.clone(),
    };
    let mut hits = 0;
    for s in sets {
        let (product, reactants) = &gold[&s.product_id];
        let a_plus = stage.score(product, &s.items, texts)?;
        let stage1: Vec<f64> = s.items.iter().map(|c| c.score).collect();
        if let Some(&top) = select_topk(&stage1, &a_plus, 1).first() {
            let want = crate::chem::canon::reactant_set_key(canon, reactants, stereo)?;
            hits += (crate::chem::canon::reactant_set_key(canon, &s.items[top].reactants, stereo)? == want) as usize;
        }
    }
    Ok(hits as f64 / sets.len() as f64)
}

fn train_rerank(cfg: &RunConfig) -> Result<StageOutcome> {
    let canon = canonicalizer_from_env()?;
    let mut texts = TextContext::open(cfg, canon.clone())?;
    let stage1 = Stage1::load(cfg, texts.encoders()).map_err(|e| e.in_stage(RERANK))?;
    let train_recs = load_split(cfg, "train", canon.as_ref())?;
    let val_recs = load_split(cfg, "val", canon.as_ref())?;
    if train_recs.is_empty() {
        return Err(TrexError::EmptySplit.in_stage(RERANK));
    }
    let train_sets = candidate_sets(cfg, &stage1, &mut texts, &train_recs, cfg.train_k, canon.as_ref())?;
    let val_sets = candidate_sets(cfg, &stage1, &mut texts, &val_recs, cfg.max_k(), canon.as_ref())?;
    let train_gold = gold_table(&train_recs, canon.as_ref())?;
    let val_gold = gold_table(&val_recs, canon.as_ref())?;
    let examples = build_rerank_trainset(&train_sets, &train_gold, canon.as_ref())?;
    let mut groups: Vec<Vec<PairExample>> = Vec::new();
    let mut last_set: Option<String> = None;
    for ex in &examples {
        let pe = PairExample {
            graphs: reactant_graphs(&ex.reactants)?,
            text: texts.pair_embedding(&ex.product, &ex.reactants)?,
            label: ex.label,
        };
        if last_set.as_deref() != Some(ex.set_id.as_str()) {
            groups.push(Vec::new());
            last_set = Some(ex.set_id.clone());
        }
        groups.last_mut().expect("group").push(pe);
    }
    let mut rcfg = RerankConfig::new(rgcn_spec(cfg), texts.width());
    rcfg.head_hidden = cfg.model.head_hidden;
    rcfg.alpha = cfg.alpha;
    let meta = ModelMeta {
        config: rcfg.clone(),
        encoders: texts.encoders().to_string(),
        reaction_class: cfg.reaction_class,
    };
    let mut rng = seeded_rng(cfg.seed.wrapping_add(2));
    let mut store = ParamStore::new();
    let model = RerankModel::new(&mut store, rcfg, &mut rng);
    let batch = cfg.batch.rerank;
    let batches_per_epoch = examples.len().div_ceil(batch);
    let mut opt = adam(cfg, &store, cfg.lr.stage2, cfg.epochs.rerank, batches_per_epoch);
    let (vsets, vgold) = if val_sets.is_empty() { (&train_sets, &train_gold) } else { (&val_sets, &val_gold) };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut track = Tracker::new(RERANK);
    for epoch in 1..=cfg.epochs.rerank {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let lr = opt.current_lr();
        let mut pending: Vec<&PairExample> = Vec::new();
        let mut step = 0;
        for (pos, &gi) in order.iter().enumerate() {
            pending.extend(groups[gi].iter());
            if pending.len() < batch && pos + 1 < order.len() {
                continue;
            }
            let inputs: Vec<RerankInput> = pending
                .iter()
                .map(|p| RerankInput {
                    reactants: &p.graphs,
                    text: &p.text,
                })
                .collect();
            let labels: Vec<bool> = pending.iter().map(|p| p.label).collect();
            let (loss, mut grads) = {
                let mut t = Tape::new(&store);
                let f = model.forward(&mut t, &inputs)?;
                let l = rerank_loss(&mut t, f.logits, f.text, &labels, cfg.alpha);
                (t.scalar(l), t.backward(l))
            };
            check_finite(loss, &grads, epoch, step, RERANK)?;
            total += loss;
            opt.step(&mut store, &mut grads);
            pending.clear();
            step += 1;
        }
        let val_metric = rerank_top1(&model, &store, vsets, vgold, &mut texts, canon.as_ref(), cfg.stereo)?;
        let row = EpochRow {
            epoch,
            train_loss: total / examples.len() as f64,
            val_metric,
            lr,
        };
        if track.push(row) {
            save_model(&cfg.run_dir, RERANK, cfg.seed, &meta, &store)?;
        }
    }
    track.finish(cfg)
}
