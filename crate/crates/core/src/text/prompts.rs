//! Prompt templates for product and retrosynthesis-pair descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrexError};

pub const PRODUCT_TEMPLATE: &str = "Please delineate the structural features, functional aspects, and applicable implementations of the molecule {{ NAME }}, commencing with the introduction:\"The molecule is {{ NAME }}\". Reasoning the most plausible type for synthesizing this molecule in the final step, and offer a rationale for your choice.";

pub const PAIR_TEMPLATE: &str = "Please delineate the structural features, functional aspects, and applicable implementations of the molecules {{ NAME }} and possible reactants {{ REACTANT1 }} and {{ REACTANT2 }} to synthesize it. You should generate the descriptions respectively as above example. These descriptions are linked by \" [SEP] \", and each commences with the introduction:\"The molecule is ...\".";

/// Separator the pair prompt asks the model to place between descriptions.
pub const SEP: &str = " [SEP] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptId {
    Product,
    Pair,
}

impl PromptId {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Product => "product",
            PromptId::Pair => "pair",
        }
    }
}

pub fn build_product_prompt(name: &str) -> Result<String> {
    if name.is_empty() {
        return Err(TrexError::EmptyName);
    }
    Ok(PRODUCT_TEMPLATE.replace("{{ NAME }}", name))
}

/// A missing second reactant repeats the first.
pub fn build_pair_prompt(product: &str, r1: &str, r2: Option<&str>) -> Result<String> {
    if product.is_empty() || r1.is_empty() || r2.is_some_and(str::is_empty) {
        return Err(TrexError::EmptyName);
    }
    // Substitute reactants first so a product name containing slot text is
    // inserted verbatim.
    Ok(PAIR_TEMPLATE
        .replace("{{ REACTANT1 }}", r1)
        .replace("{{ REACTANT2 }}", r2.unwrap_or(r1))
        .replacen("{{ NAME }}", product, 1))
}
