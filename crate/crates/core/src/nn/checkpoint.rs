//! Self-describing checkpoint files: JSON with base64 little-endian tensors.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Result, TrexError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Which model this holds, e.g. `center`.
    pub kind: String,
    pub seed: u64,
    /// Architecture settings needed to rebuild the model.
    pub meta: serde_json::Value,
    pub params: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, seed: u64, meta: serde_json::Value, store: &ParamStore) -> Self {
        let params = store
            .ids()
            .map(|id| {
                let v = store.get(id);
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                TensorRecord {
                    name: store.name(id).to_string(),
                    shape: [v.nrows(), v.ncols()],
                    data: STANDARD.encode(bytes),
                }
            })
            .collect();
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            seed,
            meta,
            params,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.params {
            let bytes = STANDARD
                .decode(&t.data)
                .map_err(|e| TrexError::Checkpoint(format!("{}: {e}", t.name)))?;
            if bytes.len() != t.shape[0] * t.shape[1] * 8 {
                return Err(TrexError::Checkpoint(format!("{}: size does not match shape", t.name)));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let arr = Array2::from_shape_vec((t.shape[0], t.shape[1]), values)
                .map_err(|e| TrexError::Checkpoint(e.to_string()))?;
            store.insert(&t.name, arr);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|_| TrexError::MissingUpstream(path.display().to_string()))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| TrexError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(TrexError::Checkpoint(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                ck.schema_version
            )));
        }
        if ck.kind != kind {
            return Err(TrexError::Checkpoint(format!(
                "{}: holds a `{}` model, expected `{kind}`",
                path.display(),
                ck.kind
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert("a", array![[0.1, -2.5e-300], [f64::MIN_POSITIVE, 7.0]]);
        s.insert("b", array![[1.0 / 3.0]]);
        let ck = Checkpoint::from_store("center", 3, serde_json::json!({"layers": 4}), &s);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p, "center").unwrap().to_store().unwrap();
        for id in s.ids() {
            assert_eq!(s.get(id), back.get(back.id(s.name(id)).unwrap()));
        }
        assert!(matches!(Checkpoint::load(&p, "rerank"), Err(TrexError::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("none.json"), "center"),
            Err(TrexError::MissingUpstream(_))
        ));
    }
}
