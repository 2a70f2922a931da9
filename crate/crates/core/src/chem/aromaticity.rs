//! Minimal Hückel perception so Kekulé and aromatic spellings of the same
//! ring system canonicalize identically. Works on the smallest cycle through
//! every ring bond (sizes 5 to 7) and on pairs of fused cycles, using the
//! input bond orders.

use std::collections::{BTreeSet, VecDeque};

use super::element::Element;
use super::molecule::{BondOrder, Molecule};

pub fn perceive_aromaticity(mol: &mut Molecule) {
    let ring = mol.ring_bonds();
    let has_kekule_ring = mol
        .bonds
        .iter()
        .zip(&ring)
        .any(|(b, &r)| r && b.order == BondOrder::Double);
    if !has_kekule_ring {
        return;
    }
    let cycles = smallest_cycles(mol, &ring);
    let mut aromatic_rings: Vec<&Vec<usize>> = Vec::new();
    for cyc in &cycles {
        if (5..=7).contains(&cyc.len()) && huckel(mol, cyc, &ring) {
            aromatic_rings.push(cyc);
        }
    }
    // Fused pairs count as one system when neither ring passes alone.
    for (x, a) in cycles.iter().enumerate() {
        for b in &cycles[x + 1..] {
            let shared = a.iter().filter(|v| b.contains(v)).count();
            if shared != 2 {
                continue;
            }
            let mut union: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
            union.sort_unstable();
            union.dedup();
            if union.len() <= 12 && huckel(mol, &union, &ring) {
                aromatic_rings.push(a);
                aromatic_rings.push(b);
            }
        }
    }
    if aromatic_rings.is_empty() {
        return;
    }
    let mut to_mark = BTreeSet::new();
    let mut ring_bonds = BTreeSet::new();
    for cyc in &aromatic_rings {
        for k in 0..cyc.len() {
            let (a, b) = (cyc[k], cyc[(k + 1) % cyc.len()]);
            to_mark.insert(a);
            if let Some(bi) = mol.bond_between(a, b) {
                ring_bonds.insert(bi);
            }
        }
    }
    for &a in &to_mark {
        if mol.atoms[a].hcount.is_none() {
            mol.atoms[a].hcount = Some(mol.implicit_h(a));
        }
    }
    for &a in &to_mark {
        mol.atoms[a].aromatic = true;
    }
    for bi in ring_bonds {
        mol.bonds[bi].order = BondOrder::Aromatic;
        mol.bonds[bi].stereo = None;
    }
}

/// For each ring bond, the shortest cycle through it; deduplicated.
fn smallest_cycles(mol: &Molecule, ring: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (bi, b) in mol.bonds.iter().enumerate() {
        if !ring[bi] {
            continue;
        }
        // BFS from b.a to b.b avoiding this bond
        let n = mol.atom_count();
        let mut parent = vec![usize::MAX; n];
        let mut q = VecDeque::from([b.a]);
        parent[b.a] = b.a;
        while let Some(u) = q.pop_front() {
            if u == b.b {
                break;
            }
            for &(v, vb) in mol.neighbors(u) {
                if vb == bi || !ring[vb] || parent[v] != usize::MAX {
                    continue;
                }
                parent[v] = u;
                q.push_back(v);
            }
        }
        if parent[b.b] == usize::MAX {
            continue;
        }
        let mut path = vec![b.b];
        let mut cur = b.b;
        while cur != b.a {
            cur = parent[cur];
            path.push(cur);
        }
        if path.len() > 7 {
            continue;
        }
        let key: BTreeSet<usize> = path.iter().copied().collect();
        let key: Vec<usize> = key.into_iter().collect();
        if seen.insert(key) {
            out.push(path);
        }
    }
    out
}

fn huckel(mol: &Molecule, cyc: &[usize], ring: &[bool]) -> bool {
    let members: BTreeSet<usize> = cyc.iter().copied().collect();
    let mut electrons = 0u32;
    for &a in cyc {
        let atom = &mol.atoms[a];
        if atom.aromatic {
            electrons += if atom.element.aromatic_pi_bond() && mol.total_h(a) == 0 { 1 } else { 2 };
            continue;
        }
        let mut ring_double = false;
        let mut exo_double_to_hetero = false;
        let mut other_multiple = false;
        for &(nb, bi) in mol.neighbors(a) {
            let order = mol.bonds[bi].order;
            match order {
                BondOrder::Double if members.contains(&nb) || ring[bi] => ring_double = true,
                BondOrder::Double => {
                    let e = mol.atoms[nb].element;
                    if matches!(e, Element::O | Element::N | Element::S) {
                        exo_double_to_hetero = true;
                    } else {
                        other_multiple = true;
                    }
                }
                BondOrder::Triple => other_multiple = true,
                _ => {}
            }
        }
        if other_multiple {
            return false;
        }
        if ring_double {
            electrons += 1;
        } else if exo_double_to_hetero {
            // carbonyl-type ring carbon donates nothing
            if atom.element != Element::C {
                return false;
            }
        } else if matches!(atom.element, Element::N | Element::O | Element::S) && mol.degree(a) <= 3 && atom.charge == 0 {
            electrons += 2;
        } else {
            return false;
        }
    }
    electrons >= 2 && (electrons - 2).is_multiple_of(4)
}
