//! Text encoders and the concatenating embedder.

use std::hash::Hasher;
use std::str::FromStr;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::http::{agent, retryable_status, with_backoff, Attempt};
use crate::error::{Result, TrexError};

pub trait TextEncoder: Send + Sync {
    fn id(&self) -> String;
    fn width(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub encoder_ids: Vec<String>,
}

/// Feature hashing of word unigrams and character n-grams; each token gets
/// a signed sparse vector and the text vector is their mean.
#[derive(Debug, Clone)]
pub struct HashedNgramEncoder {
    width: usize,
    seed: u64,
    char_ngrams: (usize, usize),
}

impl HashedNgramEncoder {
    pub fn new(width: usize, seed: u64) -> Self {
        HashedNgramEncoder {
            width,
            seed,
            char_ngrams: (3, 5),
        }
    }

    fn hash(&self, kind: u8, feature: &str) -> u64 {
        let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        h.write_u8(kind);
        h.write(feature.as_bytes());
        h.finish()
    }

    fn add_feature(&self, kind: u8, feature: &str, out: &mut [f64]) {
        let h = self.hash(kind, feature);
        let idx = (h % self.width as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        out[idx] += sign;
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '"' | '(' | ')' | '[' | ']'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl TextEncoder for HashedNgramEncoder {
    fn id(&self) -> String {
        format!("hash:{}:{}", self.width, self.seed)
    }

    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(TrexError::EncoderFailure("text has no tokens".into()));
        }
        let mut acc = vec![0.0; self.width];
        let (lo, hi) = self.char_ngrams;
        for tok in &tokens {
            self.add_feature(0, tok, &mut acc);
            let padded: Vec<char> = format!("<{tok}>").chars().collect();
            for n in lo..=hi {
                for w in padded.windows(n) {
                    self.add_feature(1, &w.iter().collect::<String>(), &mut acc);
                }
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        Ok(acc)
    }
}

/// Remote embedding endpoint: POST `{"model", "input"}`, reply
/// `{"data":[{"embedding":[...]}]}`.
pub struct HttpEncoder {
    url: String,
    model: String,
    token: Option<String>,
    width: usize,
    agent: ureq::Agent,
}

impl HttpEncoder {
    pub fn new(url: &str, model: &str, token: Option<String>, width: usize) -> Self {
        HttpEncoder {
            url: url.into(),
            model: model.into(),
            token,
            width,
            agent: agent(Duration::from_secs(60)),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl TextEncoder for HttpEncoder {
    fn id(&self) -> String {
        format!("http:{}:{}", self.model, self.width)
    }

    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({"model": self.model, "input": text});
        let v = with_backoff(5, Duration::from_millis(500), |_| {
            let mut r = self.agent.post(&self.url);
            if let Some(tok) = &self.token {
                r = r.header("Authorization", &format!("Bearer {tok}"));
            }
            match r.send_json(&body) {
                Err(e) => Attempt::Retry(e.to_string()),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if retryable_status(status) {
                        Attempt::Retry(format!("HTTP {status}"))
                    } else if !(200..300).contains(&status) {
                        Attempt::Fatal(format!("HTTP {status}"))
                    } else {
                        match resp.body_mut().read_json::<EmbeddingReply>() {
                            Ok(mut rep) if !rep.data.is_empty() => Attempt::Done(rep.data.swap_remove(0).embedding),
                            Ok(_) => Attempt::Fatal("empty embedding list".into()),
                            Err(e) => Attempt::Fatal(e.to_string()),
                        }
                    }
                }
            }
        })
        .map_err(TrexError::EncoderFailure)?;
        if v.len() != self.width {
            return Err(TrexError::EncoderFailure(format!(
                "endpoint returned width {}, configured {}",
                v.len(),
                self.width
            )));
        }
        Ok(v)
    }
}

/// `hash:<width>[:<seed>]` or `http:<width>:<model>` (URL and token from
/// `TREX_ENCODER_URL` / `TREX_ENCODER_TOKEN`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderSpec {
    Hash { width: usize, seed: u64 },
    Http { width: usize, model: String },
}

impl FromStr for EncoderSpec {
    type Err = TrexError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || TrexError::Config(format!("bad encoder spec `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let width: usize = parts.get(1).and_then(|w| w.parse().ok()).filter(|&w| w > 0).ok_or_else(bad)?;
        match (parts[0], parts.len()) {
            ("hash", 2) => Ok(EncoderSpec::Hash { width, seed: 0 }),
            ("hash", 3) => Ok(EncoderSpec::Hash {
                width,
                seed: parts[2].parse().map_err(|_| bad())?,
            }),
            ("http", n) if n >= 3 => Ok(EncoderSpec::Http {
                width,
                model: parts[2..].join(":"),
            }),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderSpec::Hash { width, seed } => write!(f, "hash:{width}:{seed}"),
            EncoderSpec::Http { width, model } => write!(f, "http:{width}:{model}"),
        }
    }
}

impl EncoderSpec {
    pub fn width(&self) -> usize {
        match self {
            EncoderSpec::Hash { width, .. } | EncoderSpec::Http { width, .. } => *width,
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEncoder>> {
        match self {
            EncoderSpec::Hash { width, seed } => Ok(Box::new(HashedNgramEncoder::new(*width, *seed))),
            EncoderSpec::Http { width, model } => {
                let url = std::env::var("TREX_ENCODER_URL")
                    .map_err(|_| TrexError::Config("TREX_ENCODER_URL is not set".into()))?;
                Ok(Box::new(HttpEncoder::new(
                    &url,
                    model,
                    std::env::var("TREX_ENCODER_TOKEN").ok(),
                    *width,
                )))
            }
        }
    }
}

/// Two encoders of widths 512 and 768.
pub fn default_encoder_specs() -> Vec<EncoderSpec> {
    vec![
        EncoderSpec::Hash { width: 512, seed: 1 },
        EncoderSpec::Hash { width: 768, seed: 2 },
    ]
}

pub struct TextEmbedder {
    encoders: Vec<Box<dyn TextEncoder>>,
}

impl TextEmbedder {
    pub fn new(encoders: Vec<Box<dyn TextEncoder>>) -> Result<Self> {
        if encoders.is_empty() {
            return Err(TrexError::Config("at least one text encoder is required".into()));
        }
        Ok(TextEmbedder { encoders })
    }

    pub fn from_specs(specs: &[EncoderSpec]) -> Result<Self> {
        Self::new(specs.iter().map(EncoderSpec::build).collect::<Result<_>>()?)
    }

    pub fn width(&self) -> usize {
        self.encoders.iter().map(|e| e.width()).sum()
    }

    pub fn ids(&self) -> Vec<String> {
        self.encoders.iter().map(|e| e.id()).collect()
    }

    /// Per-encoder vectors concatenated in configuration order.
    pub fn embed_text(&self, text: &str) -> Result<TextEmbedding> {
        if text.trim().is_empty() {
            return Err(TrexError::EncoderFailure("empty text".into()));
        }
        let mut vector = Vec::with_capacity(self.width());
        for e in &self.encoders {
            let v = e.encode(text)?;
            if v.len() != e.width() {
                return Err(TrexError::EncoderFailure(format!("{} produced width {}", e.id(), v.len())));
            }
            vector.extend(v);
        }
        Ok(TextEmbedding {
            vector,
            encoder_ids: self.ids(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::testing::MockServer;

    const TEXT: &str = "The molecule is 3-bromo-4-phenylmethoxyphenol, an aryl benzyl ether.";

    #[test]
    fn concatenated_width() {
        let e = TextEmbedder::from_specs(&default_encoder_specs()).unwrap();
        let v = e.embed_text(TEXT).unwrap();
        assert_eq!(v.vector.len(), 1280);
        assert_eq!(v.encoder_ids.len(), 2);
        let single = TextEmbedder::from_specs(&default_encoder_specs()[..1]).unwrap();
        assert_eq!(single.embed_text(TEXT).unwrap().vector.len(), 512);
    }

    #[test]
    fn deterministic_and_text_sensitive() {
        let e = TextEmbedder::from_specs(&default_encoder_specs()).unwrap();
        let a = e.embed_text(TEXT).unwrap();
        assert_eq!(a, e.embed_text(TEXT).unwrap());
        assert_ne!(a.vector, e.embed_text("The molecule is ethanol.").unwrap().vector);
    }

    #[test]
    fn mean_over_tokens() {
        let enc = HashedNgramEncoder::new(64, 0);
        let one = enc.encode("phenol").unwrap();
        let two = enc.encode("phenol phenol").unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_text_fails() {
        let e = TextEmbedder::from_specs(&default_encoder_specs()).unwrap();
        assert!(matches!(e.embed_text("  "), Err(TrexError::EncoderFailure(_))));
        assert!(TextEmbedder::new(vec![]).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("hash:512".parse::<EncoderSpec>().unwrap(), EncoderSpec::Hash { width: 512, seed: 0 });
        assert_eq!(
            "http:768:bert:base".parse::<EncoderSpec>().unwrap(),
            EncoderSpec::Http {
                width: 768,
                model: "bert:base".into()
            }
        );
        assert!("hash:0".parse::<EncoderSpec>().is_err());
        assert!("bert".parse::<EncoderSpec>().is_err());
    }

    #[test]
    fn http_encoder_checks_width() {
        let server = MockServer::start(vec![
            (200, r#"{"data":[{"embedding":[0.5,-1.0,2.0]}]}"#.into()),
            (200, r#"{"data":[{"embedding":[0.5]}]}"#.into()),
        ]);
        let enc = HttpEncoder::new(&server.url(), "m", None, 3);
        assert_eq!(enc.encode("x").unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(matches!(enc.encode("x"), Err(TrexError::EncoderFailure(_))));
    }
}
