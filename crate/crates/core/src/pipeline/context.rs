//! Descriptions and their embeddings for the records a run touches.

use std::collections::HashMap;
use std::sync::Arc;

use crate::chem::canon::Canonicalizer;
use crate::config::{DescriptionSource, RunConfig};
use crate::error::{Result, TrexError};
use crate::text::{
    build_pair_prompt, build_product_prompt, fetch_all, lookup_description, resolve_iupac, ChatCompletionProvider,
    DescriptionCache, DescriptionKey, DescriptionProvider, DescriptionRequest, HeuristicProvider, HttpResolver, LlmConfig,
    NameCache, NameResolver, PromptId, TextEmbedder,
};

/// Resolves, fetches (or looks up) and embeds descriptions, memoizing
/// embeddings per cache key.
pub struct TextContext {
    source: DescriptionSource,
    cache: DescriptionCache,
    names: NameCache,
    resolver: Option<HttpResolver>,
    provider: Option<Box<dyn DescriptionProvider>>,
    embedder: TextEmbedder,
    encoders: String,
    canon: Arc<dyn Canonicalizer>,
    in_flight: usize,
    memo: HashMap<(PromptId, DescriptionKey), Arc<Vec<f64>>>,
}

impl TextContext {
    pub fn open(cfg: &RunConfig, canon: Arc<dyn Canonicalizer>) -> Result<Self> {
        let cache = DescriptionCache::open(&cfg.descriptions_path())?;
        if cache.quarantined > 0 {
            log::warn!("{} corrupt description records quarantined", cache.quarantined);
        }
        let provider: Option<Box<dyn DescriptionProvider>> = match cfg.text.source {
            DescriptionSource::Live => Some(Box::new(ChatCompletionProvider::new(LlmConfig::from_env()?))),
            DescriptionSource::Heuristic => Some(Box::new(HeuristicProvider)),
            DescriptionSource::File => None,
        };
        let (names, resolver) = match cfg.text.source {
            DescriptionSource::File => (NameCache::in_memory(), None),
            _ => (NameCache::open(&cfg.names_path())?, HttpResolver::from_env()),
        };
        Ok(TextContext {
            source: cfg.text.source,
            cache,
            names,
            resolver,
            provider,
            embedder: TextEmbedder::from_specs(&cfg.encoder_specs()?)?,
            encoders: cfg.text.encoders.clone(),
            canon,
            in_flight: cfg.text.in_flight,
            memo: HashMap::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.embedder.width()
    }

    /// Encoder configuration string; checkpoints record it.
    pub fn encoders(&self) -> &str {
        &self.encoders
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    fn canonical(&self, smiles: &str) -> Result<String> {
        self.canon.canonicalize(smiles, true)
    }

    pub fn product_key(&self, product: &str) -> Result<DescriptionKey> {
        Ok(DescriptionKey::Molecule(self.canonical(product)?))
    }

    pub fn pair_key(&self, product: &str, reactants: &[String]) -> Result<DescriptionKey> {
        let r = reactants.iter().map(|s| self.canonical(s)).collect::<Result<Vec<_>>>()?;
        Ok(DescriptionKey::pair(&self.canonical(product)?, &r))
    }

    fn name(&mut self, smiles: &str) -> String {
        let r = self.resolver.as_ref().map(|r| r as &dyn NameResolver);
        resolve_iupac(smiles, r, &mut self.names).name
    }

    fn request(&mut self, prompt: PromptId, key: DescriptionKey) -> Result<DescriptionRequest> {
        let (names, text) = match &key {
            DescriptionKey::Molecule(p) => {
                let n = self.name(p);
                let text = build_product_prompt(&n)?;
                (vec![n], text)
            }
            DescriptionKey::Triple([p, a, b]) => {
                let names = vec![self.name(p), self.name(a), self.name(b)];
                let r2 = (a != b).then_some(names[2].as_str());
                let text = build_pair_prompt(&names[0], &names[1], r2)?;
                (names, text)
            }
        };
        Ok(DescriptionRequest {
            prompt_id: prompt,
            key,
            names,
            prompt: text,
        })
    }

    /// Makes sure every key has a description: fetched through the provider
    /// in live/heuristic mode, checked for presence in file mode. Returns the
    /// number of failures (already logged).
    pub fn ensure(&mut self, keys: &[(PromptId, DescriptionKey)]) -> Result<usize> {
        let missing: Vec<(PromptId, DescriptionKey)> = keys
            .iter()
            .filter(|(p, k)| self.cache.get(*p, k).is_none())
            .cloned()
            .collect();
        if missing.is_empty() {
            return Ok(0);
        }
        let Some(provider) = self.provider.take() else {
            return Err(TrexError::MissingDescription(missing[0].1.display()));
        };
        let mut reqs = Vec::with_capacity(missing.len());
        for (p, k) in missing {
            reqs.push(self.request(p, k)?);
        }
        let results = fetch_all(&reqs, provider.as_ref(), &mut self.cache, self.in_flight);
        self.provider = Some(provider);
        Ok(results.iter().filter(|r| r.is_err()).count())
    }

    /// Embedding of the description stored under `key`; in file mode a miss
    /// is [`TrexError::MissingDescription`].
    pub fn embedding(&mut self, prompt: PromptId, key: DescriptionKey) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.memo.get(&(prompt, key.clone())) {
            return Ok(v.clone());
        }
        if self.cache.get(prompt, &key).is_none() && self.source != DescriptionSource::File {
            let failed = self.ensure(&[(prompt, key.clone())])?;
            if failed > 0 {
                return Err(TrexError::ProviderError(format!("no description for `{key}`")));
            }
        }
        let rec = lookup_description(&self.cache, prompt, &key)?;
        let v = Arc::new(self.embedder.embed_text(&rec.text)?.vector);
        self.memo.insert((prompt, key), v.clone());
        Ok(v)
    }

    pub fn product_embedding(&mut self, product: &str) -> Result<Arc<Vec<f64>>> {
        let key = self.product_key(product)?;
        self.embedding(PromptId::Product, key)
    }

    pub fn pair_embedding(&mut self, product: &str, reactants: &[String]) -> Result<Arc<Vec<f64>>> {
        let key = self.pair_key(product, reactants)?;
        self.embedding(PromptId::Pair, key)
    }
}
