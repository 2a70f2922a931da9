//! Reaction ingestion and reaction-center labels from atom maps.

use std::collections::{HashMap, HashSet};

use super::graph::{FeatureSchema, MolecularGraph};
use super::smiles::parse_smiles;
use crate::error::{Result, TrexError};

#[derive(Debug, Clone)]
pub struct ReactionRecord {
    pub record_id: String,
    pub product: MolecularGraph,
    pub reactants: Vec<MolecularGraph>,
    /// USPTO-50k class in 1..=10 when known.
    pub reaction_type: Option<u8>,
    /// The reaction SMILES this record was parsed from.
    pub rxn_smiles: String,
}

/// Symmetric binary matrix marking broken product bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterLabelMatrix {
    pub n: usize,
    cells: Vec<u8>,
}

impl CenterLabelMatrix {
    pub fn zeros(n: usize) -> Self {
        CenterLabelMatrix {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut m = Self::zeros(n);
        for &(i, j) in pairs {
            m.set(i, j);
        }
        m
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.cells[i * self.n + j] = 1;
        self.cells[j * self.n + i] = 1;
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.n + j]
    }

    /// Unordered center pairs (i < j), sorted.
    pub fn centers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Exactly one unordered center pair.
    pub fn single_center(&self) -> Option<(usize, usize)> {
        match self.centers().as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }
}

/// Parses `reactants>>product` (or `reactants>reagents>product`).
pub fn parse_reaction_record(
    line: &str,
    reaction_type: Option<u8>,
    record_id: &str,
    schema: &FeatureSchema,
) -> Result<ReactionRecord> {
    let line = line.trim();
    let parts: Vec<&str> = line.split('>').collect();
    if parts.len() != 3 {
        return Err(TrexError::smiles(line, 0, "expected `reactants>>product`"));
    }
    let (lhs, rhs) = (parts[0], parts[2]);
    if lhs.is_empty() || rhs.is_empty() {
        return Err(TrexError::smiles(line, 0, "empty reaction side"));
    }
    let product_mol = parse_smiles(rhs)?;
    let product_parts = product_mol.components();
    if product_parts.len() != 1 {
        return Err(TrexError::UnsupportedArity(format!(
            "{} products in `{line}`",
            product_parts.len()
        )));
    }
    let reactant_mol = parse_smiles(lhs)?;
    let comps = reactant_mol.components();
    if comps.is_empty() || comps.len() > 2 {
        return Err(TrexError::UnsupportedArity(format!(
            "{} reactants in `{line}`",
            comps.len()
        )));
    }
    let reactants = comps
        .iter()
        .map(|c| MolecularGraph::from_molecule(reactant_mol.subgraph(c), schema))
        .collect();
    let mut product = MolecularGraph::from_molecule(product_mol, schema);
    product.smiles = rhs.to_string();
    Ok(ReactionRecord {
        record_id: record_id.to_string(),
        product,
        reactants,
        reaction_type,
        rxn_smiles: line.to_string(),
    })
}

impl ReactionRecord {
    /// Product maps are present and unique, each appears on exactly one
    /// reactant atom, and no reactant carries a map absent from the product.
    pub fn check_mapping(&self) -> Result<()> {
        let mut product_maps = HashSet::new();
        for (i, &m) in self.product.atom_maps.iter().enumerate() {
            if m == 0 {
                return Err(TrexError::IncompleteMapping(format!(
                    "{}: product atom {i} has no map number",
                    self.record_id
                )));
            }
            if !product_maps.insert(m) {
                return Err(TrexError::IncompleteMapping(format!(
                    "{}: map {m} repeated in product",
                    self.record_id
                )));
            }
        }
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for r in &self.reactants {
            for &m in r.atom_maps.iter().filter(|&&m| m != 0) {
                if !product_maps.contains(&m) {
                    return Err(TrexError::IncompleteMapping(format!(
                        "{}: reactant map {m} missing from product",
                        self.record_id
                    )));
                }
                *seen.entry(m).or_default() += 1;
            }
        }
        for m in &product_maps {
            if seen.get(m) != Some(&1) {
                return Err(TrexError::IncompleteMapping(format!(
                    "{}: product map {m} appears {} times among reactants",
                    self.record_id,
                    seen.get(m).copied().unwrap_or(0)
                )));
            }
        }
        Ok(())
    }

    /// Locates the reactant atom carrying each product atom's map: (reactant, atom).
    pub fn mapped_origin(&self) -> HashMap<u32, (usize, usize)> {
        let mut out = HashMap::new();
        for (ri, r) in self.reactants.iter().enumerate() {
            for (ai, &m) in r.atom_maps.iter().enumerate() {
                if m != 0 {
                    out.insert(m, (ri, ai));
                }
            }
        }
        out
    }
}

/// Marks product bonds whose mapped endpoints are not bonded within any reactant.
pub fn derive_center_labels(record: &ReactionRecord) -> Result<CenterLabelMatrix> {
    let maps = &record.product.atom_maps;
    if let Some(i) = maps.iter().position(|&m| m == 0) {
        return Err(TrexError::IncompleteMapping(format!(
            "{}: product atom {i} has no map number",
            record.record_id
        )));
    }
    let mut reactant_bonds: HashSet<(u32, u32)> = HashSet::new();
    for r in &record.reactants {
        for b in &r.molecule.bonds {
            let (x, y) = (r.atom_maps[b.a], r.atom_maps[b.b]);
            if x != 0 && y != 0 {
                reactant_bonds.insert((x.min(y), x.max(y)));
            }
        }
    }
    let mut labels = CenterLabelMatrix::zeros(record.product.n);
    for b in &record.product.molecule.bonds {
        let (x, y) = (maps[b.a], maps[b.b]);
        if !reactant_bonds.contains(&(x.min(y), x.max(y))) {
            labels.set(b.a, b.b);
        }
    }
    Ok(labels)
}
