//! Run configuration: defaults, `key = value` files and dotted-key overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, TrexError};
use crate::gnn::Aggregation;
use crate::text::EncoderSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Center,
    Completion,
    Rerank,
    Pipeline,
}

impl FromStr for Stage {
    type Err = TrexError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| TrexError::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionClassMode {
    None,
    Given,
    Predicted,
}

impl FromStr for ReactionClassMode {
    type Err = TrexError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| TrexError::Config(format!("reaction class mode must be none, given or predicted, not `{s}`")))
    }
}

/// Where descriptions come from when a stage needs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionSource {
    /// Chat-completion endpoint from the environment; results are cached.
    Live,
    /// Built-in rule-based describer; results are cached.
    Heuristic,
    /// Cache file only; a miss is an error.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Reaction file in `rxn[\ttype]` line format.
    pub path: Option<PathBuf>,
    /// Second corpus for cross-dataset or incremental runs.
    pub cross_path: Option<PathBuf>,
    /// Fraction of the second corpus' training pool mixed into training.
    pub incremental: f64,
    pub two_reactants: bool,
    /// Keep at most this many records after deduplication (0 keeps all).
    pub limit: usize,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub agg: Aggregation,
    pub head_hidden: usize,
    /// Width of the product latent `z`.
    pub latent: usize,
    pub type_width: usize,
    pub max_actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageNumbers<T> {
    pub center: T,
    pub completion: T,
    pub rerank: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub stage1: f64,
    pub stage2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    pub source: DescriptionSource,
    /// JSON-lines description cache.
    pub descriptions: Option<PathBuf>,
    /// Name cache; defaults to `names.json` in the run directory.
    pub names: Option<PathBuf>,
    /// Comma-separated encoder specs, e.g. `hash:512:1,hash:768:2`.
    pub encoders: String,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stage: Stage,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub lambda: f64,
    pub alpha: f64,
    pub loss_all_pairs: bool,
    pub beam: usize,
    /// Centers expanded per product during candidate generation.
    pub centers: usize,
    /// `(k, k')` evaluation pairings, written `3:1,5:3,10:5`.
    pub pairs: String,
    /// Candidates per product used to build the re-ranking training set.
    pub train_k: usize,
    pub batch: StageNumbers<usize>,
    pub epochs: StageNumbers<usize>,
    pub lr: RateConfig,
    pub warmup: f64,
    pub weight_decay: f64,
    pub stereo: bool,
    pub reaction_class: ReactionClassMode,
    pub text: TextConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: Stage::Pipeline,
            run_dir: PathBuf::from("runs/default"),
            seed: 0,
            data: DataConfig {
                path: None,
                cross_path: None,
                incremental: 0.0,
                two_reactants: false,
                limit: 0,
                split_seed: 0,
            },
            model: ModelConfig {
                layers: 4,
                hidden: 512,
                agg: Aggregation::Sum,
                head_hidden: 512,
                latent: 1536,
                type_width: 64,
                max_actions: 20,
            },
            lambda: 20.0,
            alpha: 0.2,
            loss_all_pairs: false,
            beam: 10,
            centers: 5,
            pairs: "3:1,5:3,10:5".into(),
            train_k: 10,
            batch: StageNumbers {
                center: 32,
                completion: 128,
                rerank: 8,
            },
            epochs: StageNumbers {
                center: 50,
                completion: 10,
                rerank: 10,
            },
            lr: RateConfig { stage1: 1e-3, stage2: 1e-5 },
            warmup: 0.1,
            weight_decay: 0.01,
            stereo: false,
            reaction_class: ReactionClassMode::None,
            text: TextConfig {
                source: DescriptionSource::File,
                descriptions: None,
                names: None,
                encoders: "hash:512:1,hash:768:2".into(),
                in_flight: 4,
            },
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a `key = value` file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| TrexError::FileUnreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrexError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one field by dotted key. Values parse as JSON when they can and
    /// are taken as strings otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| TrexError::Config(format!("unknown key `{key}`")))?;
        }
        let parsed = if slot.is_string() || (slot.is_null() && !value.starts_with('"')) {
            Value::String(value.trim_matches('"').to_string())
        } else {
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
        };
        *slot = parsed;
        *self = serde_json::from_value(root).map_err(|e| TrexError::Config(format!("`{key} = {value}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.layers", self.model.layers as f64),
            ("model.hidden", self.model.hidden as f64),
            ("model.head_hidden", self.model.head_hidden as f64),
            ("model.latent", self.model.latent as f64),
            ("model.max_actions", self.model.max_actions as f64),
            ("lambda", self.lambda),
            ("beam", self.beam as f64),
            ("centers", self.centers as f64),
            ("train_k", self.train_k as f64),
            ("batch.center", self.batch.center as f64),
            ("batch.completion", self.batch.completion as f64),
            ("batch.rerank", self.batch.rerank as f64),
            ("lr.stage1", self.lr.stage1),
            ("lr.stage2", self.lr.stage2),
            ("text.in_flight", self.text.in_flight as f64),
        ];
        for (k, v) in positive {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(v > 0.0) {
                return Err(TrexError::Config(format!("{k} must be positive")));
            }
        }
        if self.alpha < 0.0 || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.warmup) {
            return Err(TrexError::Config("alpha and weight_decay must be non-negative, warmup in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.data.incremental) {
            return Err(TrexError::Config("data.incremental must lie in [0, 1]".into()));
        }
        if self.reaction_class == ReactionClassMode::Given && self.model.type_width == 0 {
            return Err(TrexError::Config("reaction_class = given needs model.type_width > 0".into()));
        }
        self.eval_pairs()?;
        self.encoder_specs()?;
        Ok(())
    }

    pub fn eval_pairs(&self) -> Result<Vec<(usize, usize)>> {
        self.pairs
            .split(',')
            .map(|p| {
                let (k, kp) = p
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| TrexError::Config(format!("pair `{p}` is not `k:k'`")))?;
                let k: usize = k.parse().map_err(|_| TrexError::Config(format!("bad k in `{p}`")))?;
                let kp: usize = kp.parse().map_err(|_| TrexError::Config(format!("bad k' in `{p}`")))?;
                if kp == 0 || kp > k {
                    return Err(TrexError::Config(format!("pair `{p}` needs 0 < k' <= k")));
                }
                Ok((k, kp))
            })
            .collect()
    }

    pub fn encoder_specs(&self) -> Result<Vec<EncoderSpec>> {
        self.text.encoders.split(',').map(|s| s.trim().parse()).collect()
    }

    pub fn max_k(&self) -> usize {
        self.eval_pairs().map_or(10, |p| p.iter().map(|x| x.0).max().unwrap_or(10)).max(10)
    }

    pub fn descriptions_path(&self) -> PathBuf {
        self.text.descriptions.clone().unwrap_or_else(|| self.run_dir.join("descriptions.jsonl"))
    }

    pub fn names_path(&self) -> PathBuf {
        self.text.names.clone().unwrap_or_else(|| self.run_dir.join("names.json"))
    }

    /// Every field as `key = value` lines, loadable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Null => {}
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
