//! Generators, brute-force oracles and run drivers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use trex_core::chem::element::Element;
use trex_core::chem::writer::write_smiles;
use trex_core::chem::{Atom, BondOrder, FeatureSchema, MolecularGraph, Molecule};
use trex_core::nn::{Gradients, ParamStore};

const HEAVY: [(Element, u8); 4] = [(Element::C, 4), (Element::C, 4), (Element::N, 3), (Element::O, 2)];

/// Random connected molecule: a random tree plus a few ring closures, mostly
/// single bonds, valences respected.
pub fn random_molecule(rng: &mut ChaCha8Rng, n: usize) -> Molecule {
    let mut mol = Molecule::new();
    let mut free: Vec<u8> = Vec::with_capacity(n);
    let (el, val) = HEAVY[rng.random_range(0..HEAVY.len())];
    mol.add_atom(Atom::new(el));
    free.push(val);
    while free.len() < n {
        let open: Vec<usize> = (0..free.len()).filter(|&j| free[j] > 0).collect();
        let Some(&j) = open.choose(rng) else { break };
        let (el, val) = HEAVY[rng.random_range(0..HEAVY.len())];
        let i = mol.add_atom(Atom::new(el));
        free.push(val);
        let order = if free[i] >= 2 && free[j] >= 2 && rng.random_bool(0.2) {
            BondOrder::Double
        } else {
            BondOrder::Single
        };
        mol.add_bond(i, j, order);
        free[i] -= order.valence();
        free[j] -= order.valence();
    }
    let n = free.len();
    for _ in 0..rng.random_range(0..3) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && free[a] > 0 && free[b] > 0 && mol.bond_between(a, b).is_none() {
            mol.add_bond(a, b, BondOrder::Single);
            free[a] -= 1;
            free[b] -= 1;
        }
    }
    mol
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MolecularGraph {
    MolecularGraph::from_molecule(random_molecule(rng, n), &FeatureSchema::default())
}

/// Atom sets of the connected pieces left after deleting `cut`, found by
/// repeated relaxation of a dense reachability matrix.
pub fn brute_components(n: usize, bonds: &[(usize, usize)], cut: (usize, usize)) -> BTreeSet<BTreeSet<usize>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in bonds {
        if (a.min(b), a.max(b)) != (cut.0.min(cut.1), cut.0.max(cut.1)) {
            reach[a][b] = true;
            reach[b][a] = true;
        }
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if !reach[i][j] && (0..n).any(|k| reach[i][k] && reach[k][j]) {
                    reach[i][j] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|i| (0..n).filter(|&j| reach[i][j]).collect::<BTreeSet<usize>>())
        .collect()
}

/// A random atom-mapped reaction: a product whose chosen bonds were formed
/// from reactants carrying an unmapped halogen at one end of each. Returns
/// the reaction SMILES and the formed bonds as map-number pairs.
pub fn random_mapped_reaction(rng: &mut ChaCha8Rng) -> (String, BTreeSet<(u32, u32)>) {
    let n = rng.random_range(4..14);
    let mut product = random_molecule(rng, n);
    let mut order: Vec<u32> = (1..=n as u32).collect();
    order.shuffle(rng);
    for (a, m) in product.atoms.iter_mut().zip(&order) {
        a.map = *m;
    }
    let singles: Vec<usize> = (0..product.bonds.len())
        .filter(|&b| product.bonds[b].order == BondOrder::Single)
        .collect();
    if singles.is_empty() {
        return random_mapped_reaction(rng);
    }
    loop {
        let count = rng.random_range(1..=2.min(singles.len()));
        let formed: Vec<usize> = singles.choose_multiple(rng, count).copied().collect();
        let mut reactants = product.clone();
        let mut truth = BTreeSet::new();
        let mut removed = formed;
        removed.sort_unstable_by(|a, b| b.cmp(a));
        for b in removed {
            let bond = reactants.remove_bond(b);
            let (x, y) = (product.atoms[bond.a].map, product.atoms[bond.b].map);
            truth.insert((x.min(y), x.max(y)));
            if rng.random_bool(0.5) {
                let end = if rng.random_bool(0.5) { bond.a } else { bond.b };
                let lg = reactants.add_atom(Atom::new(if rng.random_bool(0.5) { Element::CL } else { Element::BR }));
                reactants.add_bond(end, lg, BondOrder::Single);
            }
        }
        // records carry one or two reactants
        let pieces = reactants.components();
        if pieces.len() > 2 {
            continue;
        }
        let parts: Vec<String> = pieces.into_iter().map(|atoms| write_smiles(&reactants.subgraph(&atoms))).collect();
        return (format!("{}>>{}", parts.join("."), write_smiles(&product)), truth);
    }
}

/// Product bonds (as map pairs) whose mapped ends are not bonded in any
/// reactant, by scanning every atom pair of every molecule.
pub fn brute_center_maps(product: &MolecularGraph, reactants: &[MolecularGraph]) -> BTreeSet<(u32, u32)> {
    let bonded = |g: &MolecularGraph, i: usize, j: usize| (0..g.b).any(|k| g.v(i, j, k) == 1);
    let mut reactant_pairs = HashSet::new();
    for r in reactants {
        for i in 0..r.n {
            for j in 0..r.n {
                if i != j && bonded(r, i, j) && r.atom_maps[i] != 0 && r.atom_maps[j] != 0 {
                    reactant_pairs.insert((r.atom_maps[i], r.atom_maps[j]));
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for i in 0..product.n {
        for j in i + 1..product.n {
            let (x, y) = (product.atom_maps[i], product.atom_maps[j]);
            if bonded(product, i, j) && !reactant_pairs.contains(&(x, y)) {
                out.insert((x.min(y), x.max(y)));
            }
        }
    }
    out
}

/// Largest relative error between `grads` and central differences over up
/// to `per_param` sampled entries of every parameter. Entries where both
/// values fall below `floor` compare by absolute difference instead.
pub fn max_gradient_error(
    store: &mut ParamStore,
    loss: &dyn Fn(&ParamStore) -> (f64, Gradients),
    per_param: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let (_, grads) = loss(store);
    let h = 1e-6;
    let floor = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.get(id).len();
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        idx.truncate(per_param);
        for k in idx {
            let orig = store.get(id).as_slice().expect("contiguous")[k];
            store.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig + h;
            let up = loss(store).0;
            store.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig - h;
            let down = loss(store).0;
            store.get_mut(id).as_slice_mut().expect("contiguous")[k] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads.get(id).map_or(0.0, |g| g.as_slice().expect("contiguous")[k]);
            let scale = num.abs().max(ana.abs());
            let err = if scale < floor { (num - ana).abs() } else { (num - ana).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Compares `extract_synthons` with the reachability oracle on one bond:
/// atom partition, bonds kept inside each piece, and hydrogens gained at the
/// cut ends.
pub fn check_synthons(g: &MolecularGraph, bond: usize) -> Result<(), String> {
    use trex_core::chem::extract_synthons;
    let b = &g.molecule.bonds[bond];
    let (i, j) = (b.a, b.b);
    let pairs: Vec<(usize, usize)> = g.molecule.bonds.iter().map(|b| (b.a, b.b)).collect();
    let expected = brute_components(g.n, &pairs, (i, j));
    let got = extract_synthons(g, (i, j), &FeatureSchema::default()).map_err(|e| format!("{}: {e}", g.smiles))?;
    let pieces: BTreeSet<BTreeSet<usize>> = got.iter().map(|s| s.origin_atoms.iter().copied().collect()).collect();
    if pieces != expected {
        return Err(format!("{} cut ({i},{j}): {pieces:?} vs {expected:?}", g.smiles));
    }
    for s in &got {
        let inside: BTreeSet<(usize, usize)> = pairs
            .iter()
            .filter(|&&(a, c)| s.origin_atoms.contains(&a) && s.origin_atoms.contains(&c))
            .filter(|&&(a, c)| (a.min(c), a.max(c)) != (i.min(j), i.max(j)))
            .map(|&(a, c)| (a.min(c), a.max(c)))
            .collect();
        let kept: BTreeSet<(usize, usize)> = s
            .graph
            .molecule
            .bonds
            .iter()
            .map(|b| {
                let (a, c) = (s.origin_atoms[b.a], s.origin_atoms[b.b]);
                (a.min(c), a.max(c))
            })
            .collect();
        if inside != kept {
            return Err(format!("{} cut ({i},{j}): bonds {kept:?} vs {inside:?}", g.smiles));
        }
        for (local, &orig) in s.origin_atoms.iter().enumerate() {
            let gained = if orig == i || orig == j { b.order.valence() } else { 0 };
            let want = g.molecule.total_h(orig) + gained;
            if s.graph.molecule.total_h(local) != want {
                return Err(format!("{} cut ({i},{j}): atom {orig} has {} H, want {want}", g.smiles, s.graph.molecule.total_h(local)));
            }
        }
    }
    Ok(())
}

/// Parses a generated mapped reaction and compares `derive_center_labels`
/// with the pair-scan oracle and with the bonds the generator formed.
pub fn check_labels(rxn: &str, formed: &BTreeSet<(u32, u32)>) -> Result<(), String> {
    use trex_core::chem::{derive_center_labels, parse_reaction_record};
    let rec = parse_reaction_record(rxn, None, "gen", &FeatureSchema::default()).map_err(|e| format!("{rxn}: {e}"))?;
    let labels = derive_center_labels(&rec).map_err(|e| format!("{rxn}: {e}"))?;
    let got: BTreeSet<(u32, u32)> = labels
        .centers()
        .into_iter()
        .map(|(a, b)| {
            let (x, y) = (rec.product.atom_maps[a], rec.product.atom_maps[b]);
            (x.min(y), x.max(y))
        })
        .collect();
    let brute = brute_center_maps(&rec.product, &rec.reactants);
    if got != brute || &got != formed {
        return Err(format!("{rxn}: labels {got:?}, oracle {brute:?}, formed {formed:?}"));
    }
    Ok(())
}

pub struct DeskRun {
    pub pre_top1: f64,
    pub post_top1: f64,
    pub records: usize,
    /// Metric CSVs and evaluation reports concatenated in a fixed order.
    pub logs: String,
    pub seconds: f64,
}

pub fn repo_config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The documented desk workflow: generate and split a corpus, write
/// heuristic descriptions to a file, then train every stage and evaluate
/// with descriptions read from that file only.
pub fn desk_run(dir: &Path, corpus: usize, overrides: &[(&str, &str)]) -> trex_core::Result<DeskRun> {
    use trex_core::config::{DescriptionSource, RunConfig, Stage};
    use trex_core::pipeline::{self, DescribeScope};
    let start = std::time::Instant::now();
    let mut cfg = RunConfig::from_file(&repo_config("desk.conf"))?;
    cfg.run_dir = dir.to_path_buf();
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    std::fs::create_dir_all(dir)?;
    let data = dir.join("corpus.txt");
    std::fs::write(&data, trex_core::data::synthetic_corpus(corpus, cfg.data.split_seed).join("\n"))?;
    cfg.data.path = Some(data);
    let ingest = pipeline::ingest(&cfg)?;
    let mut writer = cfg.clone();
    writer.text.source = DescriptionSource::Heuristic;
    assert_eq!(cfg.text.source, DescriptionSource::File);
    pipeline::describe(&writer, DescribeScope::Products)?;
    pipeline::train_stage(&cfg, Stage::Center)?;
    pipeline::train_stage(&cfg, Stage::Completion)?;
    pipeline::describe(&writer, DescribeScope::Candidates)?;
    pipeline::train_stage(&cfg, Stage::Rerank)?;
    let eval = pipeline::evaluate(&cfg)?;
    let top1 = |label: &str| {
        eval.reports
            .iter()
            .find(|r| r.label == label && r.k == 1)
            .map(|r| r.overall)
            .expect("top-1 report")
    };
    let mut logs = String::new();
    for f in ["center_metrics.csv", "completion_metrics.csv", "rerank_metrics.csv", "eval.csv", "eval.json"] {
        logs.push_str(&read(&dir.join(f)));
    }
    Ok(DeskRun {
        pre_top1: top1("stage1"),
        post_top1: top1("rerank top-3"),
        records: ingest.train + ingest.val + ingest.test,
        logs,
        seconds: start.elapsed().as_secs_f64(),
    })
}
