//! Checkpoint files of a run and the inference wrappers built from them.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::context::TextContext;
use crate::center::{rank_centers, CenterConfig, CenterInput, CenterModel};
use crate::chem::canon::Canonicalizer;
use crate::chem::{BondOrder, FeatureSchema, MolecularGraph};
use crate::completion::{complete_synthon, generate_candidates, Candidate, CandidateSet, CompletionConfig, CompletionModel, ModelPolicy};
use crate::config::{ReactionClassMode, RunConfig};
use crate::data::{predict_reaction_type, TypeClassifier, TypeFeatures};
use crate::error::{Result, TrexError};
use crate::gnn::{encode_graph, RgcnSpec};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{FeedForward, ParamStore};
use crate::rerank::{RerankConfig, RerankInput, RerankModel};

pub const CENTER: &str = "center";
pub const COMPLETION: &str = "completion";
pub const RERANK: &str = "rerank";
pub const TYPES: &str = "type";

pub fn checkpoint_path(run_dir: &Path, kind: &str) -> PathBuf {
    run_dir.join(format!("{kind}.ckpt.json"))
}

pub fn metrics_path(run_dir: &Path, kind: &str) -> PathBuf {
    run_dir.join(format!("{kind}_metrics.csv"))
}

pub fn rgcn_spec(cfg: &RunConfig) -> RgcnSpec {
    RgcnSpec {
        input_width: FeatureSchema::default().width(),
        hidden: cfg.model.hidden,
        layers: cfg.model.layers,
        bond_types: BondOrder::COUNT,
        agg: cfg.model.agg,
    }
}

/// Architecture plus the text encoders the model was trained against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta<C> {
    pub config: C,
    pub encoders: String,
    pub reaction_class: ReactionClassMode,
}

pub fn save_model<C: Serialize>(run_dir: &Path, kind: &str, seed: u64, meta: &ModelMeta<C>, store: &ParamStore) -> Result<PathBuf> {
    let path = checkpoint_path(run_dir, kind);
    Checkpoint::from_store(kind, seed, serde_json::to_value(meta)?, store).save(&path)?;
    Ok(path)
}

pub fn load_model<C: DeserializeOwned>(run_dir: &Path, kind: &str, encoders: &str) -> Result<(ModelMeta<C>, ParamStore)> {
    let ck = Checkpoint::load(&checkpoint_path(run_dir, kind), kind)?;
    let meta: ModelMeta<C> = serde_json::from_value(ck.meta.clone())
        .map_err(|e| TrexError::Checkpoint(format!("{kind} metadata: {e}")))?;
    if meta.encoders != encoders {
        return Err(TrexError::Config(format!(
            "{kind} checkpoint was trained with text encoders `{}`, run uses `{encoders}`",
            meta.encoders
        )));
    }
    Ok((meta, ck.to_store()?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeMeta {
    pub features: TypeFeatures,
    pub hidden: usize,
}

/// Center scorer and synthon completer, plus the optional type classifier.
pub struct Stage1 {
    pub center: CenterModel,
    pub center_store: ParamStore,
    pub completion: CompletionModel,
    pub completion_store: ParamStore,
    pub types: Option<(TypeClassifier, ParamStore)>,
    pub mode: ReactionClassMode,
    pub beam: usize,
    pub centers: usize,
}

impl Stage1 {
    pub fn load(cfg: &RunConfig, encoders: &str) -> Result<Self> {
        let (cm, center_store) = load_model::<CenterConfig>(&cfg.run_dir, CENTER, encoders).map_err(|e| e.in_stage(CENTER))?;
        let center = CenterModel::bind(&center_store, cm.config)?;
        let (pm, completion_store) =
            load_model::<CompletionConfig>(&cfg.run_dir, COMPLETION, encoders).map_err(|e| e.in_stage(COMPLETION))?;
        let completion = CompletionModel::bind(&completion_store, pm.config)?;
        let types = if cm.reaction_class == ReactionClassMode::Predicted {
            let (tm, store) = load_model::<TypeMeta>(&cfg.run_dir, TYPES, encoders).map_err(|e| e.in_stage(TYPES))?;
            let head = FeedForward::bind(&store, "type.ff", 2).ok_or_else(|| TrexError::Checkpoint("missing type head".into()))?;
            Some((
                TypeClassifier {
                    features: tm.config.features,
                    head,
                },
                store,
            ))
        } else {
            None
        };
        Ok(Stage1 {
            center,
            center_store,
            completion,
            completion_store,
            types,
            mode: cm.reaction_class,
            beam: cfg.beam,
            centers: cfg.centers,
        })
    }

    /// Frozen product readout of the center encoder.
    pub fn readout(&self, g: &MolecularGraph) -> Result<Vec<f64>> {
        Ok(encode_graph(&self.center_store, &self.center.rgcn, g)?.1.into_iter().collect())
    }

    /// Type fed to the center model under the configured mode.
    pub fn reaction_type(&self, g: &MolecularGraph, text: &[f64], given: Option<u8>) -> Result<Option<u8>> {
        match self.mode {
            ReactionClassMode::None => Ok(None),
            ReactionClassMode::Given => given
                .map(Some)
                .ok_or_else(|| TrexError::Config("reaction_class = given but the record has no type".into())),
            ReactionClassMode::Predicted => {
                let (clf, store) = self.types.as_ref().expect("classifier loaded in predicted mode");
                let r = self.readout(g)?;
                Ok(Some(predict_reaction_type(clf, store, &r, Some(text), None)?.0))
            }
        }
    }

    /// Top-`k` reactant sets for one product.
    pub fn candidates(
        &self,
        id: &str,
        g: &MolecularGraph,
        text: &[f64],
        rtype: Option<u8>,
        k: usize,
        canon: &dyn Canonicalizer,
    ) -> Result<CandidateSet> {
        let rtype = self.reaction_type(g, text, rtype)?;
        let scores = self
            .center
            .score_centers(&self.center_store, CenterInput { graph: g, text, rtype })
            .map_err(|e| e.in_stage(CENTER))?;
        let centers = rank_centers(&scores, self.centers);
        let readout = self.readout(g)?;
        let policy = ModelPolicy {
            model: &self.completion,
            store: &self.completion_store,
            readout: &readout,
        };
        let complete = |s: &crate::chem::Synthon| complete_synthon(&policy, s, self.beam);
        generate_candidates(id, g, &centers, &complete, canon, true, k).map_err(|e| e.in_stage(COMPLETION))
    }
}

pub struct RerankStage {
    pub model: RerankModel,
    pub store: ParamStore,
}

pub fn reactant_graphs(reactants: &[String]) -> Result<Vec<MolecularGraph>> {
    let schema = FeatureSchema::default();
    reactants.iter().map(|s| MolecularGraph::from_smiles(s, &schema)).collect()
}

impl RerankStage {
    pub fn load(cfg: &RunConfig, encoders: &str) -> Result<Self> {
        let (meta, store) = load_model::<RerankConfig>(&cfg.run_dir, RERANK, encoders).map_err(|e| e.in_stage(RERANK))?;
        Ok(RerankStage {
            model: RerankModel::bind(&store, meta.config)?,
            store,
        })
    }

    /// `a_plus` for each candidate of `product`.
    pub fn score(&self, product: &str, cands: &[Candidate], texts: &mut TextContext) -> Result<Vec<f64>> {
        let mut graphs = Vec::with_capacity(cands.len());
        let mut vecs = Vec::with_capacity(cands.len());
        for c in cands {
            graphs.push(reactant_graphs(&c.reactants)?);
            vecs.push(texts.pair_embedding(product, &c.reactants)?);
        }
        let inputs: Vec<RerankInput> = graphs
            .iter()
            .zip(&vecs)
            .map(|(g, t)| RerankInput { reactants: g, text: t })
            .collect();
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.model.score_pairs(&self.store, &inputs)?.into_iter().map(|p| p.1).collect())
    }
}
