//! Names, prompts, LLM descriptions and their vector embeddings.

pub mod cache;
pub mod encoder;
pub mod heuristic;
pub mod http;
pub mod llm;
pub mod prompts;
pub mod resolver;
#[cfg(test)]
pub(crate) mod testing;

pub use cache::{DescriptionCache, DescriptionKey, DescriptionRecord};
pub use encoder::{default_encoder_specs, EncoderSpec, TextEmbedder, TextEmbedding, TextEncoder};
pub use heuristic::HeuristicProvider;
pub use llm::{fetch_all, fetch_description, lookup_description, ChatCompletionProvider, DescriptionProvider, DescriptionRequest, LlmConfig};
pub use prompts::{build_pair_prompt, build_product_prompt, PromptId};
pub use resolver::{resolve_iupac, HttpResolver, NameCache, NameResolver, ResolvedName};
