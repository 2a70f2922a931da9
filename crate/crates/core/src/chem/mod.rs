//! Molecules, reactions and their graph encodings.

pub mod aromaticity;
pub mod canon;
pub mod element;
pub mod graph;
pub mod molecule;
pub mod reaction;
pub mod smiles;
pub mod synthon;
pub mod writer;

pub use canon::{canonical_form, Canonicalizer};
pub use graph::{FeatureSchema, MolecularGraph};
pub use molecule::{Atom, Bond, BondOrder, Molecule};
pub use reaction::{derive_center_labels, parse_reaction_record, CenterLabelMatrix, ReactionRecord};
pub use smiles::parse_smiles;
pub use synthon::{extract_synthons, Synthon};
