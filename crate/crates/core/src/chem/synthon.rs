//! Synthons: connected fragments of a product after deleting a center bond.

use super::graph::{FeatureSchema, MolecularGraph};
use crate::error::{Result, TrexError};

#[derive(Debug, Clone)]
pub struct Synthon {
    pub graph: MolecularGraph,
    /// `origin_atoms[i]` is the product index of synthon atom `i`.
    pub origin_atoms: Vec<usize>,
    /// Local indices of the center atoms that landed in this synthon.
    pub attach: Vec<usize>,
}

impl Synthon {
    pub fn local_index(&self, product_atom: usize) -> Option<usize> {
        self.origin_atoms.iter().position(|&a| a == product_atom)
    }
}

/// Splits `product` at the bond `center`. One synthon when the bond is on a
/// ring, otherwise two, ordered by smallest product atom index.
pub fn extract_synthons(
    product: &MolecularGraph,
    center: (usize, usize),
    schema: &FeatureSchema,
) -> Result<Vec<Synthon>> {
    let (i, j) = center;
    let bond = (i < product.n && j < product.n)
        .then(|| product.molecule.bond_between(i, j))
        .flatten()
        .ok_or(TrexError::NotABond(i, j))?;
    let mut cut = product.molecule.clone();
    let order = cut.bonds[bond].order.valence();
    let h_before = [cut.total_h(i), cut.total_h(j)];
    cut.remove_bond(bond);
    // the freed valence becomes hydrogen even where the count is explicit
    for (k, a) in [i, j].into_iter().enumerate() {
        if cut.total_h(a) != h_before[k] + order {
            cut.atoms[a].hcount = Some(h_before[k] + order);
        }
    }
    let parts = cut.components();
    Ok(parts
        .into_iter()
        .map(|atoms| {
            let sub = cut.subgraph(&atoms);
            let attach = atoms
                .iter()
                .enumerate()
                .filter(|(_, &a)| a == i || a == j)
                .map(|(k, _)| k)
                .collect();
            Synthon {
                graph: MolecularGraph::from_molecule(sub, schema),
                origin_atoms: atoms,
                attach,
            }
        })
        .collect())
}
