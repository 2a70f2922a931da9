//! Heavy-atom molecule model shared by the SMILES reader, writer and graph builder.

use serde::{Deserialize, Serialize};

use super::element::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Number of bond types in the adjacency tensor.
    pub const COUNT: usize = 4;
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<BondOrder> {
        Self::ALL.get(i).copied()
    }

    /// Integer valence contribution; aromatic bonds are handled separately.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

/// Tetrahedral configuration: looking from `neighbors[0]`, the remaining
/// neighbors run anticlockwise when `anticlockwise` is set (SMILES `@`).
/// `None` stands for an implicit/bracket hydrogen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tetra {
    pub neighbors: Vec<Option<usize>>,
    pub anticlockwise: bool,
}

/// Double-bond configuration relative to one reference neighbor on each end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbStereo {
    pub ref_a: usize,
    pub ref_b: usize,
    pub cis: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    pub isotope: Option<u16>,
    /// Explicit hydrogen count; `None` means "whatever the default valence implies".
    pub hcount: Option<u8>,
    /// Atom-map number, 0 when absent.
    pub map: u32,
    pub chirality: Option<Tetra>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            aromatic: false,
            charge: 0,
            isotope: None,
            hcount: None,
            map: 0,
            chirality: None,
        }
    }

    pub fn aromatic(element: Element) -> Self {
        Atom {
            aromatic: true,
            ..Atom::new(element)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub stereo: Option<DbStereo>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Per atom: (neighbor, bond index), in insertion order.
    #[serde(skip)]
    adj: Vec<Vec<(usize, usize)>>,
}

impl Molecule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Self {
        let mut m = Molecule {
            atoms,
            bonds,
            adj: Vec::new(),
        };
        m.rebuild_adjacency();
        m
    }

    pub(crate) fn rebuild_adjacency(&mut self) {
        self.adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            self.adj[b.a].push((b.b, i));
            self.adj[b.b].push((b.a, i));
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adj.push(Vec::new());
        self.atoms.len() - 1
    }

    /// Adds a bond; returns `None` for self-bonds or duplicates.
    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Option<usize> {
        if a == b || a >= self.atoms.len() || b >= self.atoms.len() || self.bond_between(a, b).is_some() {
            return None;
        }
        self.bonds.push(Bond {
            a,
            b,
            order,
            stereo: None,
        });
        let idx = self.bonds.len() - 1;
        self.adj[a].push((b, idx));
        self.adj[b].push((a, idx));
        Some(idx)
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adj[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adj[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adj
            .get(a)?
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, i)| *i)
    }

    /// Bond-order sum used for implicit hydrogen and valence checks.
    pub fn bond_valence(&self, atom: usize) -> u8 {
        let mut sum = 0u8;
        let mut aromatic = 0u8;
        for &(_, bi) in &self.adj[atom] {
            match self.bonds[bi].order {
                BondOrder::Aromatic => aromatic += 1,
                o => sum += o.valence(),
            }
        }
        if aromatic > 0 {
            sum += aromatic;
            if self.atoms[atom].element.aromatic_pi_bond() {
                sum += 1;
            }
        }
        sum
    }

    /// Hydrogens implied by the default valence model of the organic subset.
    pub fn implicit_h(&self, atom: usize) -> u8 {
        let a = &self.atoms[atom];
        if a.charge != 0 || a.isotope.is_some() {
            return 0;
        }
        let used = self.bond_valence(atom);
        let valences = a.element.default_valences();
        // aromatic atoms never promote to a higher valence state
        let valences = if a.aromatic { &valences[..valences.len().min(1)] } else { valences };
        valences
            .iter()
            .find(|&&v| v >= used)
            .map(|&v| v - used)
            .unwrap_or(0)
    }

    pub fn total_h(&self, atom: usize) -> u8 {
        self.atoms[atom].hcount.unwrap_or_else(|| self.implicit_h(atom))
    }

    /// Drops explicit hydrogen counts that the default valence model reproduces.
    pub fn normalize_hydrogens(&mut self) {
        for i in 0..self.atoms.len() {
            let a = &self.atoms[i];
            let Some(h) = a.hcount else { continue };
            if a.chirality.is_some() || !a.element.is_organic_subset() || a.charge != 0 || a.isotope.is_some() {
                continue;
            }
            if a.aromatic && !a.element.aromatic_organic() {
                continue;
            }
            if self.implicit_h(i) == h {
                self.atoms[i].hcount = None;
            }
        }
    }

    pub fn strip_maps(&mut self) {
        for a in &mut self.atoms {
            a.map = 0;
        }
    }

    /// Removes tetrahedral and double-bond stereo, materialising hydrogens of
    /// former stereocentres so they can be re-normalised.
    pub fn strip_stereo(&mut self) {
        for i in 0..self.atoms.len() {
            if self.atoms[i].chirality.take().is_some() && self.atoms[i].hcount.is_none() {
                self.atoms[i].hcount = Some(self.implicit_h(i));
            }
        }
        for b in &mut self.bonds {
            b.stereo = None;
        }
        self.normalize_hydrogens();
    }

    /// Connected components as sorted atom-index lists, ordered by smallest atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        self.components_without(None)
    }

    /// Connected components when bond `skip` is treated as deleted.
    pub fn components_without(&self, skip: Option<usize>) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            comp[start] = id;
            let mut members = Vec::new();
            while let Some(u) = stack.pop() {
                members.push(u);
                for &(v, bi) in &self.adj[u] {
                    if Some(bi) == skip || comp[v] != usize::MAX {
                        continue;
                    }
                    comp[v] = id;
                    stack.push(v);
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Flags bonds that lie on at least one cycle (non-bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0usize;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative Tarjan: (vertex, parent bond, next neighbor cursor).
            let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.len().checked_sub(1) {
                let (u, pb, cursor) = stack[top];
                if cursor < self.adj[u].len() {
                    let (v, bi) = self.adj[u][cursor];
                    stack[top].2 += 1;
                    if Some(bi) == pb {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, Some(bi), 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let (Some(&(p, _, _)), Some(bi)) = (stack.last(), pb) {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[bi] = true;
                        }
                    }
                }
            }
        }
        is_bridge.into_iter().map(|b| !b).collect()
    }

    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (b, &r) in self.bonds.iter().zip(&ring) {
            if r {
                out[b.a] = true;
                out[b.b] = true;
            }
        }
        out
    }

    /// Induced subgraph on `atoms` (in the given order). Stereo references to
    /// atoms outside the subset are dropped.
    pub fn subgraph(&self, atoms: &[usize]) -> Molecule {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atoms.iter().enumerate() {
            remap[old] = new;
        }
        let mut out_atoms: Vec<Atom> = atoms.iter().map(|&i| self.atoms[i].clone()).collect();
        for a in &mut out_atoms {
            if let Some(t) = &a.chirality {
                let mapped: Option<Vec<Option<usize>>> = t
                    .neighbors
                    .iter()
                    .map(|n| match n {
                        None => Some(None),
                        Some(x) => (remap[*x] != usize::MAX).then(|| Some(remap[*x])),
                    })
                    .collect();
                a.chirality = mapped.map(|neighbors| Tetra {
                    neighbors,
                    anticlockwise: t.anticlockwise,
                });
            }
        }
        let mut bonds = Vec::new();
        for b in &self.bonds {
            if remap[b.a] == usize::MAX || remap[b.b] == usize::MAX {
                continue;
            }
            let stereo = b.stereo.and_then(|s| {
                (remap[s.ref_a] != usize::MAX && remap[s.ref_b] != usize::MAX).then(|| DbStereo {
                    ref_a: remap[s.ref_a],
                    ref_b: remap[s.ref_b],
                    cis: s.cis,
                })
            });
            bonds.push(Bond {
                a: remap[b.a],
                b: remap[b.b],
                order: b.order,
                stereo,
            });
        }
        Molecule::from_parts(out_atoms, bonds)
    }

    /// Removes a bond; stereo descriptors that referenced it become invalid
    /// and are dropped.
    pub fn remove_bond(&mut self, bond: usize) -> Bond {
        let removed = self.bonds.remove(bond);
        for a in [removed.a, removed.b] {
            let other = removed.other(a);
            if let Some(t) = &self.atoms[a].chirality {
                if t.neighbors.contains(&Some(other)) {
                    self.atoms[a].chirality = None;
                }
            }
        }
        for b in &mut self.bonds {
            if let Some(s) = b.stereo {
                let touches = |x: usize, y: usize| {
                    (x == removed.a && y == removed.b) || (x == removed.b && y == removed.a)
                };
                if touches(b.a, s.ref_a) || touches(b.b, s.ref_b) {
                    b.stereo = None;
                }
            }
        }
        self.rebuild_adjacency();
        removed
    }

    /// Disjoint union, appending `other` after `self`.
    pub fn union(&self, other: &Molecule) -> Molecule {
        let off = self.atoms.len();
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|a| {
            let mut a = a.clone();
            if let Some(t) = &mut a.chirality {
                for n in t.neighbors.iter_mut().flatten() {
                    *n += off;
                }
            }
            a
        }));
        let mut bonds = self.bonds.clone();
        bonds.extend(other.bonds.iter().map(|b| Bond {
            a: b.a + off,
            b: b.b + off,
            order: b.order,
            stereo: b.stereo.map(|s| DbStereo {
                ref_a: s.ref_a + off,
                ref_b: s.ref_b + off,
                cis: s.cis,
            }),
        }));
        Molecule::from_parts(atoms, bonds)
    }

    pub fn has_stereo(&self) -> bool {
        self.atoms.iter().any(|a| a.chirality.is_some()) || self.bonds.iter().any(|b| b.stereo.is_some())
    }
}
