//! Description records and their append-only JSON-lines store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompts::PromptId;
use crate::error::{Result, TrexError};

/// Canonical identity of what a description is about.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DescriptionKey {
    Molecule(String),
    /// Product, first reactant, second reactant.
    Triple([String; 3]),
}

impl DescriptionKey {
    /// Reactants are sorted; a single reactant fills both slots.
    pub fn pair(product: &str, reactants: &[String]) -> Self {
        let mut r: Vec<String> = reactants.to_vec();
        r.sort();
        let r1 = r.first().cloned().unwrap_or_default();
        let r2 = r.get(1).cloned().unwrap_or_else(|| r1.clone());
        DescriptionKey::Triple([product.to_string(), r1, r2])
    }

    pub fn display(&self) -> String {
        match self {
            DescriptionKey::Molecule(s) => s.clone(),
            DescriptionKey::Triple([p, a, b]) => format!("{p}|{a}|{b}"),
        }
    }
}

impl std::fmt::Display for DescriptionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.display())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub key: DescriptionKey,
    pub iupac_names: Vec<String>,
    pub prompt_id: PromptId,
    pub text: String,
    pub provider: String,
    pub created_at: String,
}

impl DescriptionRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        let shape_ok = matches!(
            (&self.key, self.prompt_id),
            (DescriptionKey::Molecule(_), PromptId::Product) | (DescriptionKey::Triple(_), PromptId::Pair)
        );
        if !shape_ok {
            return Err("key shape does not match prompt id".into());
        }
        if chrono::DateTime::parse_from_rfc3339(&self.created_at).is_err() {
            return Err(format!("bad timestamp `{}`", self.created_at));
        }
        Ok(())
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// In-memory index over a JSON-lines file. Invalid lines are moved to a
/// `.quarantine` sibling and treated as misses.
pub struct DescriptionCache {
    path: Option<PathBuf>,
    entries: HashMap<(PromptId, DescriptionKey), DescriptionRecord>,
    pub quarantined: usize,
}

impl DescriptionCache {
    pub fn in_memory() -> Self {
        DescriptionCache {
            path: None,
            entries: HashMap::new(),
            quarantined: 0,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = DescriptionCache {
            path: Some(path.to_path_buf()),
            entries: HashMap::new(),
            quarantined: 0,
        };
        if !path.exists() {
            return Ok(cache);
        }
        let file = File::open(path).map_err(|source| TrexError::FileUnreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: std::result::Result<DescriptionRecord, String> =
                serde_json::from_str(&line).map_err(|e| e.to_string()).and_then(|r: DescriptionRecord| {
                    r.validate()?;
                    Ok(r)
                });
            match parsed {
                Ok(r) => good.push(r),
                Err(e) => {
                    log::warn!("{}", TrexError::CacheCorrupt(format!("{}: {e}", path.display())));
                    bad.push(line);
                }
            }
        }
        if !bad.is_empty() {
            cache.quarantined = bad.len();
            let mut q = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path.with_extension("quarantine"))?;
            for line in &bad {
                writeln!(q, "{line}")?;
            }
            // rewrite the live file without the corrupt entries
            let mut f = File::create(path)?;
            for r in &good {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
        }
        for r in good {
            cache.entries.insert((r.prompt_id, r.key.clone()), r);
        }
        Ok(cache)
    }

    pub fn get(&self, prompt: PromptId, key: &DescriptionKey) -> Option<&DescriptionRecord> {
        self.entries.get(&(prompt, key.clone()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &DescriptionRecord> {
        self.entries.values()
    }

    /// Stores and, for file-backed caches, appends one line.
    pub fn insert(&mut self, record: DescriptionRecord) -> Result<()> {
        record.validate().map_err(TrexError::ProviderError)?;
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        self.entries.insert((record.prompt_id, record.key.clone()), record);
        Ok(())
    }
}
