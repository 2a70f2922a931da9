//! Seeded generator of atom-mapped two-reactant reactions drawn from ten
//! bond-forming templates. Used for smoke corpora when no curated data set
//! is at hand.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::chem::molecule::{Bond, BondOrder, Molecule};
use crate::chem::smiles::parse_smiles;
use crate::chem::writer::write_smiles;
use crate::nn::seeded_rng;

/// Aryl cores; `{}` is the branch slot on the attachment atom.
const ARYL: &[&str] = &[
    "c1({})ccccc1",
    "c1({})ccc(C)cc1",
    "c1({})ccc(Cl)cc1",
    "c1({})ccc(OC)cc1",
    "c1({})ccc(F)cc1",
    "c1({})cccnc1",
    "c1({})ccc(C#N)cc1",
    "c1({})ccc2ccccc2c1",
    "c1({})ccsc1",
    "c1({})cc(C)cc(C)c1",
    "c1({})ccc(C(F)(F)F)cc1",
    "c1({})ncccc1",
];

/// Alkyl groups written from their attachment atom.
const ALKYL: &[&str] = &[
    "C",
    "CC",
    "CCC",
    "C(C)C",
    "C1CCCCC1",
    "CCOC",
    "Cc1ccccc1",
    "CC(C)(C)C",
    "C1CCOCC1",
    "CCCCC",
    "CC1CC1",
    "CCc1ccccc1",
];

const CYCLIC_AMINES: &[&str] = &["N1CCCC1", "N1CCOCC1", "N1CCCCC1", "N1CCN(C)CC1", "N1CCSCC1", "N(C)C", "N(C)Cc1ccccc1"];

/// One reagent: atom 0 is the reacting atom; `leaving` is the index of the
/// leaving-group atom bonded to it, if any.
struct Reagent {
    smiles: String,
    leaving: Option<usize>,
}

fn aryl_plain(core: &str) -> String {
    core.replace("({})", "")
}

fn aryl_with(core: &str, branch: &str) -> Reagent {
    Reagent {
        smiles: core.replace("{}", branch),
        leaving: Some(1),
    }
}

fn head(prefix: &str, leaving: Option<usize>, rest: &str) -> Reagent {
    Reagent {
        smiles: format!("{prefix}{rest}"),
        leaving,
    }
}

fn pick<'a, R: Rng>(rng: &mut R, v: &[&'a str]) -> &'a str {
    v.choose(rng).expect("non-empty")
}

fn any_group<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.5) {
        aryl_plain(pick(rng, ARYL))
    } else {
        pick(rng, ALKYL).to_string()
    }
}

pub const TEMPLATE_NAMES: [&str; 10] = [
    "ether from alkyl bromide and phenol",
    "amide from acyl chloride and amine",
    "biaryl from aryl bromide and boronic acid",
    "aryl amine from aryl bromide and cyclic amine",
    "ester from carboxylic acid and alcohol",
    "sulfonamide from sulfonyl chloride and amine",
    "tertiary amine from alkyl bromide and cyclic amine",
    "carbamate from chloroformate and amine",
    "thioether from alkyl bromide and thiophenol",
    "aryl alkyne from aryl iodide and terminal alkyne",
];

/// `(electrophile, nucleophile)` for template `t` in `0..10`.
fn reagents<R: Rng>(t: usize, rng: &mut R) -> (Reagent, Reagent) {
    match t {
        0 => (head("C(Br)", Some(1), pick(rng, ALKYL)), head("O", None, &aryl_plain(pick(rng, ARYL)))),
        1 => (head("C(=O)(Cl)", Some(2), &any_group(rng)), head("N", None, &any_group(rng))),
        2 => (aryl_with(pick(rng, ARYL), "Br"), aryl_with(pick(rng, ARYL), "B(O)O")),
        3 => (aryl_with(pick(rng, ARYL), "Br"), head(pick(rng, CYCLIC_AMINES), None, "")),
        4 => (head("C(=O)(O)", Some(2), &any_group(rng)), head("O", None, pick(rng, ALKYL))),
        5 => (head("S(=O)(=O)(Cl)", Some(3), &aryl_plain(pick(rng, ARYL))), head("N", None, &any_group(rng))),
        6 => (head("C(Br)", Some(1), pick(rng, ALKYL)), head(pick(rng, CYCLIC_AMINES), None, "")),
        7 => (
            head("C(=O)(Cl)", Some(2), pick(rng, &["OCc1ccccc1", "OC(C)(C)C", "OCC", "OC"])),
            head("N", None, &any_group(rng)),
        ),
        8 => (head("C(Br)", Some(1), pick(rng, ALKYL)), head("S", None, &aryl_plain(pick(rng, ARYL)))),
        _ => (aryl_with(pick(rng, ARYL), "I"), head("C#C", None, &any_group(rng))),
    }
}

/// Atoms of `mol` that stay after cutting the bond from atom 0 to `leaving`.
fn kept_atoms(mol: &Molecule, leaving: Option<usize>) -> Vec<bool> {
    let Some(lg) = leaving else {
        return vec![true; mol.atom_count()];
    };
    let bond = mol.bond_between(0, lg).expect("leaving group bonded to the reacting atom");
    let comps = mol.components_without(Some(bond));
    let mut keep = vec![false; mol.atom_count()];
    for c in comps.iter().filter(|c| c.contains(&0)) {
        for &i in c {
            keep[i] = true;
        }
    }
    keep
}

fn shuffled(mol: &Molecule, perm: &[usize]) -> Molecule {
    // perm[new] = old
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let atoms = perm.iter().map(|&o| mol.atoms[o].clone()).collect();
    let bonds = mol
        .bonds
        .iter()
        .map(|b| Bond {
            a: inv[b.a],
            b: inv[b.b],
            order: b.order,
            stereo: None,
        })
        .collect();
    Molecule::from_parts(atoms, bonds)
}

/// Builds one mapped reaction line `reactants>>product`.
fn build<R: Rng>(t: usize, rng: &mut R) -> Option<String> {
    let (e, n) = reagents(t, rng);
    let mut em = parse_smiles(&e.smiles).ok()?;
    let mut nm = parse_smiles(&n.smiles).ok()?;
    em.normalize_hydrogens();
    nm.normalize_hydrogens();
    let ek = kept_atoms(&em, e.leaving);
    let nk = kept_atoms(&nm, n.leaving);
    let mut next = 1u32;
    for (mol, keep) in [(&mut em, &ek), (&mut nm, &nk)] {
        for (i, a) in mol.atoms.iter_mut().enumerate() {
            if keep[i] {
                a.map = next;
                next += 1;
            }
        }
    }
    let both = em.union(&nm);
    let off = em.atom_count();
    let keep: Vec<usize> = (0..both.atom_count())
        .filter(|&i| if i < off { ek[i] } else { nk[i - off] })
        .collect();
    let mut product = both.subgraph(&keep);
    let (a, b) = (0, ek.iter().filter(|&&k| k).count());
    product.add_bond(a, b, BondOrder::Single)?;
    for a in product.atoms.iter_mut() {
        a.hcount = None;
    }
    product.normalize_hydrogens();

    let mut perm: Vec<usize> = (0..product.atom_count()).collect();
    perm.shuffle(rng);
    let product = shuffled(&product, &perm);
    let mut reactants = [em, nm];
    reactants.shuffle(rng);
    let mut line = String::new();
    let _ = write!(
        line,
        "{}.{}>>{}",
        write_smiles(&reactants[0]),
        write_smiles(&reactants[1]),
        write_smiles(&product)
    );
    Some(line)
}

/// `count` lines `rxn\ttype` with types in `1..=10`, cycling over templates
/// in random order. Duplicates are possible.
pub fn synthetic_corpus(count: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = rng.random_range(0..10);
        if let Some(line) = build(t, &mut rng) {
            out.push(format!("{line}\t{}", t + 1));
        }
    }
    out
}
