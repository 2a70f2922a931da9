//! Tensor view of a molecule: bond-type adjacency `V` (n×n×b) and node
//! features `E` (n×d).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::element::Element;
use super::molecule::{BondOrder, Molecule};
use super::smiles::parse_smiles;
use super::writer::write_smiles;
use crate::error::Result;

/// Node feature layout: element one-hot (+ "other"), degree 0..=5, aromatic
/// bit, formal-charge bucket (-1/0/+1/other), ring-membership bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub elements: Vec<Element>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        let symbols = [
            "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Sn", "Mg", "Zn", "Cu", "Se",
        ];
        FeatureSchema {
            elements: symbols.iter().map(|s| Element::from_symbol(s).unwrap()).collect(),
        }
    }
}

pub const MAX_DEGREE_FEATURE: usize = 5;

impl FeatureSchema {
    pub fn width(&self) -> usize {
        self.elements.len() + 1 + (MAX_DEGREE_FEATURE + 1) + 1 + 4 + 1
    }

    pub fn element_slot(&self, e: Element) -> Option<usize> {
        self.elements.iter().position(|&x| x == e)
    }

    fn encode_into(&self, mol: &Molecule, ring: &[bool], i: usize, row: &mut [f64]) {
        let a = &mol.atoms[i];
        let ne = self.elements.len();
        match self.element_slot(a.element) {
            Some(k) => row[k] = 1.0,
            None => {
                log::warn!("atom type {} outside the feature vocabulary; using the 'other' slot", a.element);
                row[ne] = 1.0;
            }
        }
        let mut off = ne + 1;
        row[off + mol.degree(i).min(MAX_DEGREE_FEATURE)] = 1.0;
        off += MAX_DEGREE_FEATURE + 1;
        if a.aromatic {
            row[off] = 1.0;
        }
        off += 1;
        let bucket = match a.charge {
            -1 => 0,
            0 => 1,
            1 => 2,
            _ => 3,
        };
        row[off + bucket] = 1.0;
        off += 4;
        if ring[i] {
            row[off] = 1.0;
        }
    }

    pub fn encode(&self, mol: &Molecule) -> Array2<f64> {
        let ring = mol.ring_atoms();
        let mut e = Array2::zeros((mol.atom_count(), self.width()));
        for i in 0..mol.atom_count() {
            let mut row = e.row_mut(i);
            self.encode_into(mol, &ring, i, row.as_slice_mut().unwrap());
        }
        e
    }
}

#[derive(Debug, Clone)]
pub struct MolecularGraph {
    pub n: usize,
    pub b: usize,
    v: Vec<u8>,
    pub e: Array2<f64>,
    pub atom_maps: Vec<u32>,
    pub smiles: String,
    pub molecule: Molecule,
    by_type: Vec<Vec<Vec<usize>>>,
}

impl MolecularGraph {
    pub fn from_molecule(molecule: Molecule, schema: &FeatureSchema) -> Self {
        let e = schema.encode(&molecule);
        let smiles = write_smiles(&molecule);
        Self::with_features(molecule, e, smiles)
    }

    /// Builds the adjacency tensor around caller-supplied node features.
    pub fn with_features(molecule: Molecule, e: Array2<f64>, smiles: String) -> Self {
        let n = molecule.atom_count();
        let b = BondOrder::COUNT;
        let mut v = vec![0u8; n * n * b];
        let mut by_type = vec![vec![Vec::new(); n]; b];
        for bond in &molecule.bonds {
            let k = bond.order.index();
            v[(bond.a * n + bond.b) * b + k] = 1;
            v[(bond.b * n + bond.a) * b + k] = 1;
            by_type[k][bond.a].push(bond.b);
            by_type[k][bond.b].push(bond.a);
        }
        let atom_maps = molecule.atoms.iter().map(|a| a.map).collect();
        MolecularGraph {
            n,
            b,
            v,
            e,
            atom_maps,
            smiles,
            molecule,
            by_type,
        }
    }

    pub fn from_smiles(smiles: &str, schema: &FeatureSchema) -> Result<Self> {
        let mol = parse_smiles(smiles)?;
        let mut g = Self::from_molecule(mol, schema);
        g.smiles = smiles.to_string();
        Ok(g)
    }

    pub fn d(&self) -> usize {
        self.e.ncols()
    }

    pub fn v(&self, i: usize, j: usize, k: usize) -> u8 {
        self.v[(i * self.n + j) * self.b + k]
    }

    /// The b-wide bond-type indicator for the pair (i, j).
    pub fn v_ij(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.b).map(|k| self.v(i, j, k) as f64).collect()
    }

    pub fn bond_type(&self, i: usize, j: usize) -> Option<BondOrder> {
        (0..self.b).find(|&k| self.v(i, j, k) == 1).and_then(BondOrder::from_index)
    }

    /// Neighbor lists for one bond type.
    pub fn type_adjacency(&self, k: usize) -> &[Vec<usize>] {
        &self.by_type[k]
    }

    /// Bonded unordered pairs (i < j), sorted.
    pub fn bonded_pairs(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<(usize, usize)> = self.molecule.bonds.iter().map(|b| b.key()).collect();
        p.sort_unstable();
        p
    }

    /// Serializes the backing molecule (atom maps kept).
    pub fn to_smiles(&self) -> String {
        write_smiles(&self.molecule)
    }

    /// Checks symmetry, single type per pair, empty diagonal and feature rows.
    pub fn check_invariants(&self) -> bool {
        for i in 0..self.n {
            for k in 0..self.b {
                if self.v(i, i, k) != 0 {
                    return false;
                }
            }
            for j in 0..self.n {
                let mut count = 0;
                for k in 0..self.b {
                    if self.v(i, j, k) != self.v(j, i, k) {
                        return false;
                    }
                    count += self.v(i, j, k);
                }
                if count > 1 {
                    return false;
                }
            }
        }
        self.e.nrows() == self.n
            && self
                .e
                .iter()
                .all(|&x| x == 0.0 || x == 1.0)
            && self.e.rows().into_iter().all(|r| r.iter().any(|&x| x == 1.0))
    }

    /// Relabels atoms: new atom `perm[i]` is old atom `i`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let mut inv = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mol = self.molecule.subgraph(&inv);
        let mut e = Array2::zeros(self.e.raw_dim());
        for (old, &new) in perm.iter().enumerate() {
            e.row_mut(new).assign(&self.e.row(old));
        }
        MolecularGraph::with_features(mol, e, self.smiles.clone())
    }
}
