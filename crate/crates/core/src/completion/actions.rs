//! Generation actions over a partial molecule and their legality rules.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chem::element::Element;
use crate::chem::{Atom, BondOrder, MolecularGraph, Molecule, Synthon};
use crate::error::{Result, TrexError};

/// A new atom together with the bond that attaches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttachItem {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    /// Explicit hydrogens at the moment of attachment; later bonds to this
    /// atom consume them. `None` means the default valence model applies.
    pub hcount: Option<u8>,
    pub order: BondOrder,
}

impl AttachItem {
    pub fn plain(element: Element, order: BondOrder) -> Self {
        AttachItem {
            element,
            aromatic: false,
            charge: 0,
            hcount: None,
            order,
        }
    }

    fn atom(&self) -> Atom {
        Atom {
            aromatic: self.aromatic,
            charge: self.charge,
            hcount: self.hcount,
            ..Atom::new(self.element)
        }
    }

    /// Whether a fresh atom of this kind can carry the attaching bond.
    fn fits(&self) -> bool {
        if self.order == BondOrder::Aromatic && !self.aromatic {
            return false;
        }
        match self.hcount {
            Some(_) => true,
            None => {
                self.charge == 0
                    && self.element.default_valences().first().is_some_and(|&v| {
                        let need = if self.aromatic && self.element.aromatic_pi_bond() { 2 } else { 1 };
                        v >= self.order.valence().max(need)
                    })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Attach vocabulary item `item` to existing atom `anchor`.
    AddAtom { anchor: usize, item: usize },
    /// Bond the most recently added atom to atom `to`.
    AddBond { to: usize, order: BondOrder },
    Stop,
}

/// Generation state: the synthon atoms come first and are never modified
/// except for hydrogen counts.
#[derive(Debug, Clone)]
pub struct PartialGraph {
    pub mol: Molecule,
    pub synthon_atoms: usize,
    pub last_added: Option<usize>,
    pub steps: usize,
}

/// Index layout of one step's action row: atom actions `anchor * V + item`,
/// then (when an atom has been added) bond actions `to * 4 + order`, then stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub n: usize,
    pub vocab: usize,
    pub has_bond: bool,
}

impl ActionLayout {
    pub fn len(&self) -> usize {
        self.n * self.vocab + if self.has_bond { self.n * BondOrder::COUNT } else { 0 } + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stop(&self) -> usize {
        self.len() - 1
    }

    pub fn index(&self, a: Action) -> Option<usize> {
        match a {
            Action::AddAtom { anchor, item } => (anchor < self.n && item < self.vocab).then(|| anchor * self.vocab + item),
            Action::AddBond { to, order } => {
                (self.has_bond && to < self.n).then(|| self.n * self.vocab + to * BondOrder::COUNT + order.index())
            }
            Action::Stop => Some(self.stop()),
        }
    }

    pub fn action(&self, idx: usize) -> Action {
        let atoms = self.n * self.vocab;
        if idx < atoms {
            Action::AddAtom {
                anchor: idx / self.vocab,
                item: idx % self.vocab,
            }
        } else if idx == self.stop() {
            Action::Stop
        } else {
            let r = idx - atoms;
            Action::AddBond {
                to: r / BondOrder::COUNT,
                order: BondOrder::from_index(r % BondOrder::COUNT).expect("bond index"),
            }
        }
    }
}

impl PartialGraph {
    /// Starts from a synthon with atom maps removed.
    pub fn from_synthon(s: &Synthon) -> Self {
        let mut mol = s.graph.molecule.clone();
        mol.strip_maps();
        mol.normalize_hydrogens();
        PartialGraph {
            synthon_atoms: mol.atom_count(),
            mol,
            last_added: None,
            steps: 0,
        }
    }

    pub fn layout(&self, vocab: usize) -> ActionLayout {
        ActionLayout {
            n: self.mol.atom_count(),
            vocab,
            has_bond: self.last_added.is_some(),
        }
    }

    /// Bond order that can still be added at `a`: explicit hydrogens when
    /// the count is fixed, otherwise room under the maximum valence
    /// (aromatic atoms stay at their implicit hydrogen count).
    fn free(&self, a: usize) -> u8 {
        let atom = &self.mol.atoms[a];
        match atom.hcount {
            Some(h) => h,
            None if atom.aromatic => self.mol.implicit_h(a),
            None => atom.element.max_valence(atom.charge).saturating_sub(self.mol.bond_valence(a)),
        }
    }

    fn bond_ok(&self, a: usize, b: usize, order: BondOrder) -> bool {
        if a == b || self.mol.bond_between(a, b).is_some() {
            return false;
        }
        if order == BondOrder::Aromatic && !(self.mol.atoms[a].aromatic && self.mol.atoms[b].aromatic) {
            return false;
        }
        let v = order.valence();
        self.free(a) >= v && self.free(b) >= v
    }

    /// Legality of every action in `layout(vocab.len())` order.
    pub fn legal(&self, vocab: &[AttachItem]) -> Vec<bool> {
        let layout = self.layout(vocab.len());
        let mut out = Vec::with_capacity(layout.len());
        let fits: Vec<bool> = vocab.iter().map(AttachItem::fits).collect();
        for a in 0..layout.n {
            let free = self.free(a);
            let aromatic = self.mol.atoms[a].aromatic;
            for (v, item) in vocab.iter().enumerate() {
                let ok = fits[v]
                    && free >= item.order.valence()
                    && (item.order != BondOrder::Aromatic || aromatic);
                out.push(ok);
            }
        }
        if let Some(u) = self.last_added {
            for to in 0..layout.n {
                for order in BondOrder::ALL {
                    out.push(self.bond_ok(u, to, order));
                }
            }
        }
        out.push(true);
        out
    }

    fn consume_h(&mut self, a: usize, v: u8) {
        if let Some(h) = self.mol.atoms[a].hcount.as_mut() {
            *h = h.saturating_sub(v);
        }
    }

    /// Applies a legal action. Stop only counts the step.
    pub fn apply(&mut self, action: Action, vocab: &[AttachItem]) -> Result<()> {
        let illegal = || TrexError::GenerationStuck(format!("illegal action {action:?}"));
        match action {
            Action::AddAtom { anchor, item } => {
                let it = vocab.get(item).ok_or_else(illegal)?;
                if anchor >= self.mol.atom_count()
                    || self.free(anchor) < it.order.valence()
                    || !it.fits()
                    || (it.order == BondOrder::Aromatic && !self.mol.atoms[anchor].aromatic)
                {
                    return Err(illegal());
                }
                let new = self.mol.add_atom(it.atom());
                self.mol.add_bond(anchor, new, it.order);
                self.consume_h(anchor, it.order.valence());
                self.last_added = Some(new);
            }
            Action::AddBond { to, order } => {
                let u = self.last_added.ok_or_else(illegal)?;
                if to >= self.mol.atom_count() || !self.bond_ok(u, to, order) {
                    return Err(illegal());
                }
                self.mol.add_bond(u, to, order);
                self.consume_h(u, order.valence());
                self.consume_h(to, order.valence());
            }
            Action::Stop => {}
        }
        self.steps += 1;
        Ok(())
    }
}

/// Gold action sequence that grows `synthon` into `reactant` (breadth-first
/// from the synthon atoms, neighbors in reactant index order), ending in Stop.
/// Items are looked up (or added) through `intern`.
pub fn derive_actions(
    synthon: &Synthon,
    product: &MolecularGraph,
    reactant: &MolecularGraph,
    mut intern: impl FnMut(AttachItem) -> Option<usize>,
) -> Result<Vec<Action>> {
    let mismatch = |why: String| TrexError::IncompleteMapping(why);
    let by_map: HashMap<u32, usize> = reactant
        .atom_maps
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0)
        .map(|(i, &m)| (m, i))
        .collect();
    let mut r = reactant.molecule.clone();
    r.strip_maps();
    r.normalize_hydrogens();

    let mut placed: HashMap<usize, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for (s, &pa) in synthon.origin_atoms.iter().enumerate() {
        let m = product.atom_maps[pa];
        let ra = *by_map
            .get(&m)
            .ok_or_else(|| mismatch(format!("map {m} of the synthon is not in this reactant")))?;
        placed.insert(ra, s);
        queue.push_back(ra);
    }
    let sm = &synthon.graph.molecule;
    for b in &r.bonds {
        if let (Some(&x), Some(&y)) = (placed.get(&b.a), placed.get(&b.b)) {
            match sm.bond_between(x, y) {
                Some(k) if sm.bonds[k].order == b.order => {}
                _ => return Err(mismatch("reactant changes a bond inside the synthon".into())),
            }
        }
    }
    if sm.bonds.len() != r.bonds.iter().filter(|b| placed.contains_key(&b.a) && placed.contains_key(&b.b)).count() {
        return Err(mismatch("synthon bond missing from reactant".into()));
    }

    let mut actions = Vec::new();
    let mut next = sm.atom_count();
    while let Some(ra) = queue.pop_front() {
        let mut nbrs: Vec<(usize, usize)> = r.neighbors(ra).to_vec();
        nbrs.sort_unstable();
        for (nb, bi) in nbrs {
            if placed.contains_key(&nb) {
                continue;
            }
            let atom = &r.atoms[nb];
            let hcount = atom.hcount.map(|h| {
                let later: u8 = r
                    .neighbors(nb)
                    .iter()
                    .filter(|(x, _)| *x != ra && !placed.contains_key(x))
                    .map(|&(_, b)| r.bonds[b].order.valence())
                    .sum();
                h + later
            });
            let item = AttachItem {
                element: atom.element,
                aromatic: atom.aromatic,
                charge: atom.charge,
                hcount,
                order: r.bonds[bi].order,
            };
            let idx = intern(item).ok_or_else(|| mismatch(format!("attachment {item:?} not in vocabulary")))?;
            actions.push(Action::AddAtom {
                anchor: placed[&ra],
                item: idx,
            });
            placed.insert(nb, next);
            next += 1;
            let mut back: Vec<(usize, usize)> = r
                .neighbors(nb)
                .iter()
                .filter(|(x, _)| *x != ra && placed.contains_key(x))
                .map(|&(x, b)| (placed[&x], b))
                .collect();
            back.sort_unstable();
            for (to, b) in back {
                actions.push(Action::AddBond {
                    to,
                    order: r.bonds[b].order,
                });
            }
            queue.push_back(nb);
        }
    }
    if placed.len() != r.atom_count() {
        return Err(mismatch("reactant has atoms unreachable from the synthon".into()));
    }
    actions.push(Action::Stop);
    Ok(actions)
}

/// Builds a vocabulary covering the given items plus common attachments,
/// sorted for a stable index order.
pub fn build_vocab(extra: impl IntoIterator<Item = AttachItem>) -> Vec<AttachItem> {
    let mut v: Vec<AttachItem> = default_items();
    v.extend(extra);
    v.sort();
    v.dedup();
    v
}

fn default_items() -> Vec<AttachItem> {
    use BondOrder::*;
    let mut v = Vec::new();
    for e in [Element::C, Element::N, Element::O, Element::F, Element::CL, Element::BR, Element::I, Element::B, Element::S] {
        v.push(AttachItem::plain(e, Single));
    }
    for e in [Element::C, Element::N, Element::O] {
        v.push(AttachItem::plain(e, Double));
    }
    v.push(AttachItem::plain(Element::N, Triple));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::canon::canonical_molecule;
    use crate::chem::{extract_synthons, parse_reaction_record, FeatureSchema};

    fn replay(rxn: &str, center: (usize, usize)) -> Vec<(String, String, usize)> {
        let schema = FeatureSchema::default();
        let rec = parse_reaction_record(rxn, None, "t", &schema).unwrap();
        let synthons = extract_synthons(&rec.product, center, &schema).unwrap();
        let mut vocab: Vec<AttachItem> = Vec::new();
        let mut out = Vec::new();
        for s in &synthons {
            let reactant = rec
                .reactants
                .iter()
                .find(|r| r.atom_maps.contains(&rec.product.atom_maps[s.origin_atoms[0]]))
                .unwrap();
            let actions = derive_actions(s, &rec.product, reactant, |it| {
                Some(vocab.iter().position(|x| *x == it).unwrap_or_else(|| {
                    vocab.push(it);
                    vocab.len() - 1
                }))
            })
            .unwrap();
            let mut pg = PartialGraph::from_synthon(s);
            for &a in &actions {
                let layout = pg.layout(vocab.len());
                assert!(pg.legal(&vocab)[layout.index(a).unwrap()], "{a:?} should be legal");
                pg.apply(a, &vocab).unwrap();
            }
            let mut gold = reactant.molecule.clone();
            gold.strip_maps();
            out.push((canonical_molecule(&pg.mol, true), canonical_molecule(&gold, true), actions.len()));
        }
        out
    }

    #[test]
    fn ester_from_acid_chloride() {
        let got = replay("[CH3:1][C:2](=[O:3])Cl.[OH:4][CH3:5]>>[CH3:1][C:2](=[O:3])[O:4][CH3:5]", (1, 3));
        for (a, b, _) in &got {
            assert_eq!(a, b);
        }
        assert_eq!(got.iter().map(|x| x.2).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn amide_from_acid() {
        let got = replay("[CH3:1][C:2](=[O:3])O.[NH2:4][CH3:5]>>[CH3:1][C:2](=[O:3])[NH:4][CH3:5]", (1, 3));
        assert!(got.iter().all(|(a, b, _)| a == b));
        assert_eq!(got.iter().map(|x| x.2).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn ring_leaving_group_closes_ring() {
        let got = replay(
            "Cc1ccc(S(=O)(=O)O[CH2:1][CH3:2])cc1.[NH3:3]>>[NH2:3][CH2:1][CH3:2]",
            (0, 1),
        );
        assert!(got.iter().all(|(a, b, _)| a == b));
        let tosyl = got.iter().map(|x| x.2).max().unwrap();
        // 11 atoms added, one ring closure, stop
        assert_eq!(tosyl, 13);
    }

    #[test]
    fn layout_round_trip() {
        let l = ActionLayout {
            n: 3,
            vocab: 5,
            has_bond: true,
        };
        for idx in 0..l.len() {
            assert_eq!(l.index(l.action(idx)), Some(idx));
        }
        let nb = ActionLayout { has_bond: false, ..l };
        assert_eq!(nb.len(), 16);
        assert_eq!(nb.index(Action::AddBond { to: 0, order: BondOrder::Single }), None);
    }

    #[test]
    fn valence_mask() {
        let mut pg = PartialGraph {
            mol: crate::chem::parse_smiles("C(F)(F)F").unwrap(),
            synthon_atoms: 4,
            last_added: None,
            steps: 0,
        };
        let vocab = vec![AttachItem::plain(Element::C, BondOrder::Single), AttachItem::plain(Element::O, BondOrder::Double)];
        let legal = pg.legal(&vocab);
        assert_eq!(&legal[0..2], &[true, false]);
        assert_eq!(&legal[2..4], &[false, false]);
        pg.apply(Action::AddAtom { anchor: 0, item: 0 }, &vocab).unwrap();
        let legal = pg.legal(&vocab);
        assert!(!legal[0]);
        assert!(pg.apply(Action::AddAtom { anchor: 0, item: 0 }, &vocab).is_err());
    }
}
