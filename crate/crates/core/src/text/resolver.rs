//! Name resolution: HTTP compound lookup, a local name cache, and the
//! canonical-SMILES fallback.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{agent, retryable_status, with_backoff, Attempt};
use crate::error::{Result, TrexError};

pub trait NameResolver: Send + Sync {
    fn lookup(&self, smiles: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedName {
    pub name: String,
    /// The name is the SMILES itself because lookup failed.
    pub fallback: bool,
}

/// Posts `smiles=<...>` as a form to a lookup endpoint. The reply may be
/// JSON containing an `IUPACName` field anywhere, or plain text whose first
/// line is the name.
pub struct HttpResolver {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    pub max_attempts: usize,
    pub backoff: Duration,
}

impl HttpResolver {
    pub fn new(url: &str, token: Option<String>) -> Self {
        HttpResolver {
            url: url.to_string(),
            token,
            agent: agent(Duration::from_secs(30)),
            max_attempts: 5,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `TREX_RESOLVER_URL` and `TREX_RESOLVER_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("TREX_RESOLVER_URL").ok()?;
        Some(Self::new(&url, std::env::var("TREX_RESOLVER_TOKEN").ok()))
    }
}

fn find_iupac(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Object(m) => {
            if let Some(serde_json::Value::String(s)) = m.get("IUPACName") {
                return Some(s.clone());
            }
            m.values().find_map(find_iupac)
        }
        serde_json::Value::Array(a) => a.iter().find_map(find_iupac),
        _ => None,
    }
}

fn parse_reply(body: &str) -> Option<String> {
    let name = match serde_json::from_str::<serde_json::Value>(body) {
        Ok(v) => find_iupac(&v)?,
        Err(_) => body.lines().next()?.to_string(),
    };
    let name = name.trim().to_string();
    (!name.is_empty()).then_some(name)
}

impl NameResolver for HttpResolver {
    fn lookup(&self, smiles: &str) -> Result<String> {
        with_backoff(self.max_attempts, self.backoff, |_| {
            let mut r = self.agent.post(&self.url);
            if let Some(tok) = &self.token {
                r = r.header("Authorization", &format!("Bearer {tok}"));
            }
            match r.send_form([("smiles", smiles)]) {
                Err(e) => Attempt::Retry(e.to_string()),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if retryable_status(status) {
                        return Attempt::Retry(format!("HTTP {status}"));
                    }
                    if !(200..300).contains(&status) {
                        return Attempt::Fatal(format!("HTTP {status}"));
                    }
                    match resp.body_mut().read_to_string() {
                        Ok(body) => match parse_reply(&body) {
                            Some(n) => Attempt::Done(n),
                            None => Attempt::Fatal("no name in reply".into()),
                        },
                        Err(e) => Attempt::Retry(e.to_string()),
                    }
                }
            }
        })
        .map_err(TrexError::ResolverUnavailable)
    }
}

/// Persistent `smiles -> name` map stored as one JSON object.
pub struct NameCache {
    path: Option<PathBuf>,
    names: BTreeMap<String, String>,
}

impl NameCache {
    pub fn in_memory() -> Self {
        NameCache {
            path: None,
            names: BTreeMap::new(),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let names = if path.exists() {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| TrexError::CacheCorrupt(format!("{}: {e}", path.display())))?
        } else {
            BTreeMap::new()
        };
        Ok(NameCache {
            path: Some(path.to_path_buf()),
            names,
        })
    }

    pub fn get(&self, smiles: &str) -> Option<&str> {
        self.names.get(smiles).map(String::as_str)
    }

    pub fn insert(&mut self, smiles: &str, name: &str) -> Result<()> {
        self.names.insert(smiles.to_string(), name.to_string());
        if let Some(p) = &self.path {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, serde_json::to_string_pretty(&self.names)?)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Cached lookup of `canonical_smiles`. Failures fall back to the SMILES
/// itself and are not cached, so a later run can still resolve them.
pub fn resolve_iupac(canonical_smiles: &str, resolver: Option<&dyn NameResolver>, cache: &mut NameCache) -> ResolvedName {
    if let Some(n) = cache.get(canonical_smiles) {
        return ResolvedName {
            name: n.to_string(),
            fallback: false,
        };
    }
    let looked_up = match resolver {
        Some(r) => r.lookup(canonical_smiles),
        None => Err(TrexError::ResolverUnavailable("no resolver configured".into())),
    };
    match looked_up {
        Ok(name) => {
            if let Err(e) = cache.insert(canonical_smiles, &name) {
                log::warn!("name cache not written: {e}");
            }
            ResolvedName { name, fallback: false }
        }
        Err(e) => {
            if resolver.is_some() {
                log::warn!("{e}; using `{canonical_smiles}` as its own name");
            } else {
                log::debug!("{e}; using `{canonical_smiles}` as its own name");
            }
            ResolvedName {
                name: canonical_smiles.to_string(),
                fallback: true,
            }
        }
    }
}
