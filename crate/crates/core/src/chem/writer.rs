//! SMILES writer and canonical ranking.

use std::collections::HashMap;

use super::molecule::{BondOrder, Molecule};

/// Per-atom invariant used to seed refinement.
fn atom_invariant(mol: &Molecule, ring_atoms: &[bool], i: usize, keep_maps: bool) -> (u8, u16, i8, bool, u8, usize, bool, u32) {
    let a = &mol.atoms[i];
    (
        a.element.0,
        a.isotope.unwrap_or(0),
        a.charge,
        a.aromatic,
        mol.total_h(i),
        mol.degree(i),
        ring_atoms[i],
        if keep_maps { a.map } else { 0 },
    )
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<&K> = keys.iter().collect();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(&k).unwrap())
        .collect()
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().copied().max().map_or(0, |m| m + 1)
}

/// Iterative neighborhood refinement until the partition stabilises.
fn refine(mol: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let before = class_count(&ranks);
        let keys: Vec<(usize, Vec<(usize, usize)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(usize, usize)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(n, bi)| (mol.bonds[bi].order.index(), ranks[n]))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        ranks = dense_ranks(&keys);
        if class_count(&ranks) == before {
            return ranks;
        }
    }
}

fn break_tie(ranks: &[usize], chosen: usize) -> Vec<usize> {
    let keys: Vec<(usize, bool)> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, i != chosen))
        .collect();
    dense_ranks(&keys)
}

/// Smallest rank shared by more than one atom, with its members.
fn first_tied_class(ranks: &[usize]) -> Option<Vec<usize>> {
    let mut counts: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &r) in ranks.iter().enumerate() {
        counts.entry(r).or_default().push(i);
    }
    counts
        .into_iter()
        .filter(|(_, m)| m.len() > 1)
        .min_by_key(|(r, _)| *r)
        .map(|(_, m)| m)
}

const SEARCH_BUDGET: usize = 64;

/// Canonical SMILES of a single connected component (maps and stereo as
/// present in `mol`; callers strip what they do not want compared).
fn canonical_component(mol: &Molecule, keep_maps: bool) -> String {
    if mol.atom_count() == 0 {
        return String::new();
    }
    let ring_atoms = mol.ring_atoms();
    let inv: Vec<_> = (0..mol.atom_count())
        .map(|i| atom_invariant(mol, &ring_atoms, i, keep_maps))
        .collect();
    let ranks = refine(mol, dense_ranks(&inv));
    let explore = true;
    let mut budget = SEARCH_BUDGET;
    let mut best: Option<String> = None;
    search(mol, ranks, explore, &mut budget, &mut best, keep_maps);
    best.unwrap_or_default()
}

fn search(mol: &Molecule, ranks: Vec<usize>, explore: bool, budget: &mut usize, best: &mut Option<String>, keep_maps: bool) {
    match first_tied_class(&ranks) {
        None => {
            let s = write_with_ranks(mol, &ranks, keep_maps);
            *budget = budget.saturating_sub(1);
            if best.as_ref().is_none_or(|b| s < *b) {
                *best = Some(s);
            }
        }
        Some(members) => {
            let tries = if explore && *budget > 0 { members.len() } else { 1 };
            for &m in members.iter().take(tries) {
                let next = refine(mol, break_tie(&ranks, m));
                search(mol, next, explore && *budget > 0, budget, best, keep_maps);
            }
        }
    }
}

/// Canonical SMILES; disconnected components are written separately and sorted.
pub fn canonical_smiles(mol: &Molecule, keep_maps: bool) -> String {
    let comps = mol.components();
    if comps.len() == 1 {
        return canonical_component(mol, keep_maps);
    }
    let mut parts: Vec<String> = comps
        .iter()
        .map(|c| canonical_component(&mol.subgraph(c), keep_maps))
        .collect();
    parts.sort();
    parts.join(".")
}

/// Writes SMILES following input atom order (first atom of each component
/// starts, neighbors visited in index order). Keeps atom maps.
pub fn write_smiles(mol: &Molecule) -> String {
    let ranks: Vec<usize> = (0..mol.atom_count()).collect();
    write_with_ranks(mol, &ranks, true)
}

struct Layout {
    visit: Vec<usize>,
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    /// (bond, opener, closer)
    closures: Vec<(usize, usize, usize)>,
    /// per bond: (first written, second written)
    written: HashMap<usize, (usize, usize)>,
}

fn layout(mol: &Molecule, ranks: &[usize]) -> Layout {
    let n = mol.atom_count();
    let mut l = Layout {
        visit: vec![usize::MAX; n],
        order: Vec::with_capacity(n),
        children: vec![Vec::new(); n],
        parent: vec![None; n],
        closures: Vec::new(),
        written: HashMap::new(),
    };
    let mut used = vec![false; mol.bonds.len()];
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&i| ranks[i]);
    for s in starts {
        if l.visit[s] != usize::MAX {
            continue;
        }
        // explicit stack of (atom, sorted neighbor list, cursor)
        let sorted_nbrs = |a: usize| {
            let mut v: Vec<(usize, usize)> = mol.neighbors(a).to_vec();
            v.sort_by_key(|&(nb, _)| ranks[nb]);
            v
        };
        l.visit[s] = l.order.len();
        l.order.push(s);
        let mut stack = vec![(s, sorted_nbrs(s), 0usize)];
        while let Some(top) = stack.last_mut() {
            let (a, ref nbrs, ref mut cur) = *top;
            if *cur >= nbrs.len() {
                stack.pop();
                continue;
            }
            let (nb, bi) = nbrs[*cur];
            *cur += 1;
            if used[bi] {
                continue;
            }
            used[bi] = true;
            if l.visit[nb] == usize::MAX {
                l.visit[nb] = l.order.len();
                l.order.push(nb);
                l.children[a].push(nb);
                l.parent[nb] = Some(a);
                l.written.insert(bi, (a, nb));
                let next = sorted_nbrs(nb);
                stack.push((nb, next, 0));
            } else {
                l.closures.push((bi, nb, a));
                l.written.insert(bi, (nb, a));
            }
        }
    }
    l
}

fn permutation_is_odd(from: &[Option<usize>], to: &[Option<usize>]) -> Option<bool> {
    if from.len() != to.len() {
        return None;
    }
    let pos: Option<Vec<usize>> = to.iter().map(|x| from.iter().position(|y| y == x)).collect();
    let pos = pos?;
    let mut inversions = 0;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if pos[i] > pos[j] {
                inversions += 1;
            }
        }
    }
    Some(inversions % 2 == 1)
}

/// Assigns `/` (true) or `\` (false) to single bonds flanking stereo double bonds.
fn assign_directions(mol: &Molecule, l: &Layout) -> HashMap<usize, bool> {
    let mut dirs: HashMap<usize, bool> = HashMap::new();
    let mut db: Vec<usize> = (0..mol.bonds.len())
        .filter(|&bi| mol.bonds[bi].stereo.is_some() && l.written.contains_key(&bi))
        .collect();
    db.sort_by_key(|&bi| {
        let b = &mol.bonds[bi];
        (l.visit[b.a].min(l.visit[b.b]), l.visit[b.a].max(l.visit[b.b]))
    });
    let up_of = |bi: usize, center: usize, slash: bool| {
        let (_, second) = l.written[&bi];
        if second == center {
            !slash
        } else {
            slash
        }
    };
    let slash_for = |bi: usize, center: usize, up: bool| {
        let (_, second) = l.written[&bi];
        if second == center {
            !up
        } else {
            up
        }
    };
    for bi in db {
        let bond = &mol.bonds[bi];
        let st = bond.stereo.unwrap();
        let (a, b) = if l.visit[bond.a] <= l.visit[bond.b] {
            (bond.a, bond.b)
        } else {
            (bond.b, bond.a)
        };
        let (ra, rb) = if bond.a == a { (st.ref_a, st.ref_b) } else { (st.ref_b, st.ref_a) };
        let pick = |center: usize, other: usize, dirs: &HashMap<usize, bool>| {
            let mut cands: Vec<(usize, usize)> = mol
                .neighbors(center)
                .iter()
                .copied()
                .filter(|&(n, nbi)| n != other && mol.bonds[nbi].order == BondOrder::Single)
                .collect();
            cands.sort_by_key(|&(n, nbi)| (!dirs.contains_key(&nbi), l.visit[n]));
            cands.first().copied()
        };
        let (Some((x, xb)), Some((y, yb))) = (pick(a, b, &dirs), pick(b, a, &dirs)) else {
            continue;
        };
        let x_up = match dirs.get(&xb) {
            Some(&s) => up_of(xb, a, s),
            None => {
                dirs.insert(xb, slash_for(xb, a, false));
                false
            }
        };
        let cis = st.cis ^ (x != ra) ^ (y != rb);
        let y_up = if cis { x_up } else { !x_up };
        dirs.entry(yb).or_insert_with(|| slash_for(yb, b, y_up));
    }
    dirs
}

fn write_with_ranks(mol: &Molecule, ranks: &[usize], keep_maps: bool) -> String {
    let l = layout(mol, ranks);
    let dirs = assign_directions(mol, &l);

    // ring-closure events per atom, ordered by partner visit index
    let mut events: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mol.atom_count()];
    for &(bi, opener, closer) in &l.closures {
        events[opener].push((closer, bi));
        events[closer].push((opener, bi));
    }
    for ev in &mut events {
        ev.sort_by_key(|&(p, _)| l.visit[p]);
    }

    let mut out = String::new();
    let mut digits: HashMap<usize, u32> = HashMap::new();
    let mut free: Vec<bool> = vec![true; 100];
    let bond_symbol = |bi: usize| -> String {
        let b = &mol.bonds[bi];
        if let Some(&slash) = dirs.get(&bi) {
            return if slash { "/" } else { "\\" }.to_string();
        }
        let both_aromatic = mol.atoms[b.a].aromatic && mol.atoms[b.b].aromatic;
        match b.order {
            BondOrder::Single if both_aromatic => "-".into(),
            BondOrder::Single => String::new(),
            BondOrder::Double => "=".into(),
            BondOrder::Triple => "#".into(),
            BondOrder::Aromatic if both_aromatic => String::new(),
            BondOrder::Aromatic => ":".into(),
        }
    };

    let mut first_component = true;
    // emission uses an explicit stack of work items
    enum Item {
        Atom(usize),
        Text(&'static str),
    }
    for &root in l.order.iter().filter(|&&a| l.parent[a].is_none()) {
        if !first_component {
            out.push('.');
        }
        first_component = false;
        let mut stack = vec![Item::Atom(root)];
        while let Some(item) = stack.pop() {
            let a = match item {
                Item::Text(t) => {
                    out.push_str(t);
                    continue;
                }
                Item::Atom(a) => a,
            };
            if let Some(p) = l.parent[a] {
                out.push_str(&bond_symbol(mol.bond_between(p, a).unwrap()));
            }
            // stereo neighbor order as written
            let mut written_nbrs: Vec<Option<usize>> = Vec::new();
            if let Some(p) = l.parent[a] {
                written_nbrs.push(Some(p));
            }
            let implicit_slot = mol.atoms[a].chirality.as_ref().is_some_and(|t| t.neighbors.contains(&None));
            if mol.total_h(a) > 0 || implicit_slot {
                written_nbrs.push(None);
            }
            for &(p, _) in &events[a] {
                written_nbrs.push(Some(p));
            }
            for &c in &l.children[a] {
                written_nbrs.push(Some(c));
            }
            out.push_str(&atom_token(mol, a, &written_nbrs, keep_maps));
            for &(partner, bi) in &events[a] {
                let key = bi;
                if let Some(d) = digits.remove(&key) {
                    free[d as usize] = true;
                    push_digit(&mut out, d);
                } else {
                    let d = (1..100).find(|&d| free[d]).unwrap_or(99) as u32;
                    free[d as usize] = false;
                    digits.insert(key, d);
                    let _ = partner;
                    out.push_str(&bond_symbol(bi));
                    push_digit(&mut out, d);
                }
            }
            let kids = &l.children[a];
            for (k, &c) in kids.iter().enumerate().rev() {
                if k + 1 == kids.len() {
                    stack.push(Item::Atom(c));
                } else {
                    stack.push(Item::Text(")"));
                    stack.push(Item::Atom(c));
                    stack.push(Item::Text("("));
                }
            }
        }
    }
    out
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d}"));
    }
}

fn atom_token(mol: &Molecule, i: usize, written_nbrs: &[Option<usize>], keep_maps: bool) -> String {
    let a = &mol.atoms[i];
    let chir = a.chirality.as_ref().and_then(|t| {
        permutation_is_odd(&t.neighbors, written_nbrs).map(|odd| t.anticlockwise ^ odd)
    });
    let h = mol.total_h(i);
    let needs_bracket = !a.element.is_organic_subset()
        || a.charge != 0
        || a.isotope.is_some()
        || chir.is_some()
        || (keep_maps && a.map != 0)
        || a.hcount.is_some_and(|x| x != mol.implicit_h(i))
        || (a.aromatic && !a.element.aromatic_organic());
    let mut sym = a.element.symbol().to_string();
    if a.aromatic {
        sym = sym.to_ascii_lowercase();
    }
    if a.element.0 == 0 && !needs_bracket {
        return "*".into();
    }
    if !needs_bracket {
        return sym;
    }
    let mut s = String::from("[");
    if let Some(iso) = a.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&sym);
    match chir {
        Some(true) => s.push('@'),
        Some(false) => s.push_str("@@"),
        None => {}
    }
    if h == 1 {
        s.push('H');
    } else if h > 1 {
        s.push_str(&format!("H{h}"));
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    if keep_maps && a.map != 0 {
        s.push_str(&format!(":{}", a.map));
    }
    s.push(']');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::smiles::parse_smiles;

    fn canon(s: &str) -> String {
        canonical_smiles(&parse_smiles(s).unwrap(), false)
    }

    #[test]
    fn atom_order_independent() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("c1ccccc1O"), canon("Oc1ccccc1"));
        assert_eq!(canon("C(C)(C)(C)Br"), canon("BrC(C)(C)C"));
    }

    #[test]
    fn writer_round_trips() {
        for s in [
            "CCO",
            "c1ccccc1",
            "Oc1ccc(OCc2ccccc2)c(Br)c1",
            "O=C1CN(c2ccncc2)CCN1c1ccc(OCc2ccccc2)cc1",
            "C1CC2CCC1CC2",
            "[NH4+].[Cl-]",
            "c1cc[nH]c1",
            "N[C@@H](C)C(=O)O",
            "F/C=C/F",
            "C1CCCCCCCCCC1",
            "c1ccc2ccccc2c1-c1ccccc1",
        ] {
            let m = parse_smiles(s).unwrap();
            let w = write_smiles(&m);
            let back = parse_smiles(&w).unwrap();
            assert_eq!(canonical_smiles(&back, false), canonical_smiles(&m, false), "{s} -> {w}");
        }
    }

    #[test]
    fn stereo_written_consistently() {
        let a = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        let b = parse_smiles("C[C@H](N)C(=O)O").unwrap();
        let c = parse_smiles("C[C@@H](N)C(=O)O").unwrap();
        assert_eq!(canonical_smiles(&a, false), canonical_smiles(&b, false));
        assert_ne!(canonical_smiles(&a, false), canonical_smiles(&c, false));
    }

    #[test]
    fn maps_written_when_kept() {
        let m = parse_smiles("[CH3:1][OH:2]").unwrap();
        let s = write_smiles(&m);
        assert!(s.contains(":1]") && s.contains(":2]"), "{s}");
    }
}
