//! Rule-based description provider that needs no network. It reads the
//! canonical SMILES in the request key and describes size, rings and
//! functional groups in fixed sentences.

use std::collections::BTreeMap;

use super::cache::DescriptionKey;
use super::llm::{DescriptionProvider, DescriptionRequest};
use super::prompts::SEP;
use crate::chem::element::Element;
use crate::chem::{parse_smiles, BondOrder, Molecule};
use crate::error::Result;

#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicProvider;

impl DescriptionProvider for HeuristicProvider {
    fn tag(&self) -> String {
        "heuristic-v1".into()
    }

    fn complete(&self, req: &DescriptionRequest) -> Result<String> {
        let name_of = |i: usize, fallback: &str| req.names.get(i).cloned().unwrap_or_else(|| fallback.to_string());
        match &req.key {
            DescriptionKey::Molecule(s) => describe_molecule(s, &name_of(0, s)),
            DescriptionKey::Triple(t) => {
                let parts = t
                    .iter()
                    .enumerate()
                    .map(|(i, s)| describe_molecule(s, &name_of(i, s)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(parts.join(SEP))
            }
        }
    }
}

fn bond_order(m: &Molecule, a: usize, b: usize) -> Option<BondOrder> {
    m.bond_between(a, b).map(|k| m.bonds[k].order)
}

fn heavy_neighbors(m: &Molecule, a: usize) -> impl Iterator<Item = usize> + '_ {
    m.neighbors(a).iter().map(|&(n, _)| n)
}

fn is(m: &Molecule, a: usize, e: Element) -> bool {
    m.atoms[a].element == e
}

/// Carbon carrying a double-bonded oxygen.
fn carbonyl_carbon(m: &Molecule, c: usize) -> bool {
    is(m, c, Element::C)
        && heavy_neighbors(m, c).any(|o| is(m, o, Element::O) && bond_order(m, c, o) == Some(BondOrder::Double))
}

/// Functional-group counts keyed by a readable label.
pub fn functional_groups(m: &Molecule) -> BTreeMap<&'static str, usize> {
    let mut g: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut bump = |k: &'static str| *g.entry(k).or_default() += 1;
    for a in 0..m.atoms.len() {
        let at = &m.atoms[a];
        let nb: Vec<usize> = heavy_neighbors(m, a).collect();
        let h = m.total_h(a);
        match at.element {
            Element::F | Element::CL | Element::BR | Element::I => {
                let label = match (at.element, nb.first().map(|&c| m.atoms[c].aromatic)) {
                    (_, None) => "halide ion",
                    (Element::F, Some(true)) => "aryl fluoride",
                    (Element::F, Some(false)) => "alkyl fluoride",
                    (Element::CL, _) if nb.iter().any(|&c| carbonyl_carbon(m, c)) => "acyl chloride",
                    (Element::CL, Some(true)) => "aryl chloride",
                    (Element::CL, Some(false)) => "alkyl chloride",
                    (Element::BR, Some(true)) => "aryl bromide",
                    (Element::BR, Some(false)) => "alkyl bromide",
                    (_, Some(true)) => "aryl iodide",
                    _ => "alkyl iodide",
                };
                bump(label);
            }
            Element::O if !at.aromatic => {
                if nb.len() == 1 && h == 1 {
                    let c = nb[0];
                    if carbonyl_carbon(m, c) {
                        bump("carboxylic acid");
                    } else if is(m, c, Element::B) {
                        bump("boronic acid hydroxyl");
                    } else if m.atoms[c].aromatic {
                        bump("phenol");
                    } else if is(m, c, Element::C) {
                        bump("alcohol");
                    }
                } else if nb.len() == 2 && nb.iter().all(|&c| is(m, c, Element::C)) {
                    let acyl = nb.iter().filter(|&&c| carbonyl_carbon(m, c)).count();
                    match acyl {
                        0 => bump("ether"),
                        1 if nb.iter().any(|&c| carbonyl_carbon(m, c) && heavy_neighbors(m, c).any(|x| is(m, x, Element::N))) => {
                            bump("carbamate")
                        }
                        1 => bump("ester"),
                        _ => bump("anhydride"),
                    }
                }
            }
            Element::C if carbonyl_carbon(m, a) => {
                let hetero = nb
                    .iter()
                    .filter(|&&x| {
                        !(is(m, x, Element::O) && bond_order(m, a, x) == Some(BondOrder::Double))
                            && !is(m, x, Element::C)
                    })
                    .count();
                if hetero == 0 {
                    bump(if h > 0 { "aldehyde" } else { "ketone" });
                } else if nb.iter().any(|&x| is(m, x, Element::N)) && !nb.iter().any(|&x| is(m, x, Element::O) && bond_order(m, a, x) == Some(BondOrder::Single)) {
                    bump("amide");
                }
            }
            Element::C if nb.iter().any(|&x| is(m, x, Element::N) && bond_order(m, a, x) == Some(BondOrder::Triple)) => {
                bump("nitrile")
            }
            Element::N if !at.aromatic => {
                let oxy = nb.iter().filter(|&&x| is(m, x, Element::O)).count();
                if oxy >= 2 {
                    bump("nitro group");
                } else if nb.iter().any(|&c| carbonyl_carbon(m, c)) {
                } else if nb.iter().any(|&s| is(m, s, Element::S)) {
                    bump("sulfonamide");
                } else if nb.iter().all(|&x| is(m, x, Element::C))
                    && nb.iter().all(|&x| bond_order(m, a, x) == Some(BondOrder::Single))
                {
                    bump(match h {
                        2 => "primary amine",
                        1 => "secondary amine",
                        _ if nb.len() == 3 => "tertiary amine",
                        _ => "amine",
                    });
                }
            }
            Element::N if at.aromatic => bump("aromatic nitrogen"),
            Element::S if !at.aromatic => {
                let dbl_o = nb
                    .iter()
                    .filter(|&&x| is(m, x, Element::O) && bond_order(m, a, x) == Some(BondOrder::Double))
                    .count();
                if dbl_o == 2 {
                    bump(if nb.iter().any(|&x| is(m, x, Element::CL)) { "sulfonyl chloride" } else { "sulfonyl group" });
                } else if dbl_o == 0 && h == 1 {
                    bump("thiol");
                } else if dbl_o == 0 {
                    bump("thioether");
                }
            }
            Element::B => bump("boron reagent"),
            Element::C
                if nb.len() == 4
                    && nb.iter().filter(|&&x| is(m, x, Element::C) && m.degree(x) == 1).count() == 3
                    && nb.iter().any(|&o| is(m, o, Element::O) && heavy_neighbors(m, o).any(|c| carbonyl_carbon(m, c))) =>
            {
                bump("tert-butoxycarbonyl group")
            }
            _ => {}
        }
    }
    g
}

fn cycle_rank(atoms: usize, bonds: usize, comps: usize) -> usize {
    (bonds + comps).saturating_sub(atoms)
}

fn ring_counts(m: &Molecule) -> (usize, usize) {
    let total = cycle_rank(m.atoms.len(), m.bonds.len(), m.components().len());
    let arom: Vec<usize> = (0..m.atoms.len()).filter(|&a| m.atoms[a].aromatic).collect();
    let aromatic = if arom.is_empty() {
        0
    } else {
        let sub = m.subgraph(&arom);
        let sub_bonds = sub.bonds.iter().filter(|b| b.order == BondOrder::Aromatic).count();
        cycle_rank(sub.atoms.len(), sub_bonds, sub.components().len())
    };
    (total, aromatic)
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("one {word}")
    } else {
        format!("{n} {word}s")
    }
}

pub fn describe_molecule(smiles: &str, name: &str) -> Result<String> {
    let m = parse_smiles(smiles)?;
    let (rings, aromatic) = ring_counts(&m);
    let mut elements: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &m.atoms {
        *elements.entry(a.element.symbol()).or_default() += 1;
    }
    let formula: Vec<String> = elements.iter().map(|(e, n)| format!("{e}{n}")).collect();
    let mut s = format!(
        "The molecule is {name}. It has {} heavy atoms ({}) and {}",
        m.atoms.len(),
        formula.join(" "),
        plural(rings, "ring")
    );
    if aromatic > 0 {
        s.push_str(&format!(", {} of them aromatic", aromatic));
    }
    s.push('.');
    let groups = functional_groups(&m);
    if groups.is_empty() {
        s.push_str(" It carries no common functional group.");
    } else {
        let listed: Vec<String> = groups.iter().map(|(g, n)| if *n == 1 { g.to_string() } else { format!("{n} {g} units") }).collect();
        s.push_str(&format!(" It contains {}.", listed.join(", ")));
    }
    if m.has_stereo() {
        s.push_str(" Its stereochemistry is specified.");
    }
    Ok(s)
}
