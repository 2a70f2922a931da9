use ndarray::Array2;

use super::*;
use crate::chem::canon::{canonical_molecule, BuiltinCanonicalizer};
use crate::chem::element::Element;
use crate::chem::{extract_synthons, parse_reaction_record, BondOrder, FeatureSchema, MolecularGraph, Synthon};
use crate::gnn::{Aggregation, RgcnSpec};
use crate::nn::{seeded_rng, Adam, AdamConfig, ParamStore, Tape};

fn cfg(vocab: Vec<AttachItem>) -> CompletionConfig {
    CompletionConfig {
        rgcn: RgcnSpec {
            input_width: FeatureSchema::default().width(),
            hidden: 8,
            layers: 2,
            bond_types: 4,
            agg: Aggregation::Sum,
        },
        product_width: 5,
        latent_width: 6,
        hidden: 8,
        vocab,
        max_actions: 20,
    }
}

fn vocab() -> Vec<AttachItem> {
    build_vocab([])
}

fn synthon(smiles: &str, center: (usize, usize), which: usize) -> Synthon {
    let g = MolecularGraph::from_smiles(smiles, &FeatureSchema::default()).unwrap();
    extract_synthons(&g, center, &FeatureSchema::default()).unwrap().remove(which)
}

const READOUT: [f64; 5] = [0.3, -0.1, 0.8, 0.0, 0.5];

#[test]
fn latent_width_and_determinism() {
    let mut c = cfg(vocab());
    c.latent_width = 1536;
    let mut store = ParamStore::new();
    let m = CompletionModel::new(&mut store, c, &mut seeded_rng(1));
    let z = m.encode_latent(&store, &READOUT);
    assert_eq!(z.len(), 1536);
    assert_eq!(z, m.encode_latent(&store, &READOUT));
    store.get_mut(m.proj).fill(0.0);
    assert!(m.encode_latent(&store, &READOUT).iter().all(|&x| x == 0.0));
}

struct StopOnly(Vec<AttachItem>);

impl StepPolicy for StopOnly {
    fn vocab(&self) -> &[AttachItem] {
        &self.0
    }
    fn max_actions(&self) -> usize {
        20
    }
    fn log_probs(&self, states: &[&PartialGraph]) -> crate::Result<Vec<Vec<f64>>> {
        Ok(states
            .iter()
            .map(|s| {
                let l = s.layout(self.0.len());
                let mut row = vec![f64::NEG_INFINITY; l.len()];
                row[l.stop()] = 0.0;
                row
            })
            .collect())
    }
}

#[test]
fn stop_policy_returns_synthon() {
    let s = synthon("CC(=O)OC", (1, 3), 0);
    let out = complete_synthon(&StopOnly(vocab()), &s, 10).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].log_prob, 0.0);
    let mut gold = s.graph.molecule.clone();
    gold.strip_maps();
    assert_eq!(canonical_molecule(&out[0].molecule, true), canonical_molecule(&gold, true));
}

#[test]
fn rows_are_distributions() {
    let mut store = ParamStore::new();
    let m = CompletionModel::new(&mut store, cfg(vocab()), &mut seeded_rng(2));
    let s = synthon("CC(=O)OCc1ccccc1", (1, 3), 0);
    let mut a = PartialGraph::from_synthon(&s);
    let b = a.clone();
    a.apply(Action::AddAtom { anchor: 1, item: 0 }, &m.cfg.vocab).unwrap();
    let rows = m.log_probs(&store, &[&a, &b], &READOUT).unwrap();
    for (row, st) in rows.iter().zip([&a, &b]) {
        assert_eq!(row.len(), st.layout(m.cfg.vocab.len()).len());
        let total: f64 = row.iter().filter(|x| x.is_finite()).map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let legal = st.legal(&m.cfg.vocab);
        for (lp, ok) in row.iter().zip(legal) {
            assert_eq!(lp.is_finite(), ok);
        }
    }
    // batching does not change the rows
    let alone = m.log_probs(&store, &[&b], &READOUT).unwrap();
    for (x, y) in alone[0].iter().zip(&rows[1]) {
        assert!(x == y || (x - y).abs() < 1e-12);
    }
}

#[test]
fn beam_one_is_greedy() {
    let mut store = ParamStore::new();
    let mut c = cfg(vocab());
    c.max_actions = 6;
    let m = CompletionModel::new(&mut store, c, &mut seeded_rng(3));
    let policy = ModelPolicy {
        model: &m,
        store: &store,
        readout: &READOUT,
    };
    let s = synthon("CC(=O)Nc1ccccc1", (1, 3), 0);
    let got = complete_synthon(&policy, &s, 1).unwrap();

    let mut state = PartialGraph::from_synthon(&s);
    let mut score = 0.0;
    let mut greedy = None;
    for _ in 0..m.cfg.max_actions {
        let row = m.log_probs(&store, &[&state], &READOUT).unwrap().remove(0);
        let (best, lp) = row
            .iter()
            .enumerate()
            .filter(|(_, x)| x.is_finite())
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        score += lp;
        let a = state.layout(m.cfg.vocab.len()).action(best);
        state.apply(a, &m.cfg.vocab).unwrap();
        if a == Action::Stop {
            greedy = Some((canonical_molecule(&state.mol, true), score));
            break;
        }
    }
    match greedy {
        Some((smi, sc)) => {
            assert_eq!(got.len(), 1);
            assert_eq!(canonical_molecule(&got[0].molecule, true), smi);
            assert!((got[0].log_prob - sc).abs() < 1e-9);
        }
        None => assert!(got.is_empty()),
    }
}

#[test]
fn hypotheses_keep_synthon_and_scores_replay() {
    let mut store = ParamStore::new();
    let mut c = cfg(vocab());
    c.max_actions = 4;
    let m = CompletionModel::new(&mut store, c, &mut seeded_rng(4));
    let policy = ModelPolicy {
        model: &m,
        store: &store,
        readout: &READOUT,
    };
    let s = synthon("CC(=O)OCC", (1, 3), 1);
    let start = PartialGraph::from_synthon(&s);
    let out = complete_synthon(&policy, &s, 5).unwrap();
    assert!(!out.is_empty() && out.len() <= 5);
    for w in out.windows(2) {
        assert!(w[0].log_prob >= w[1].log_prob);
    }
    for c in &out {
        let sub = c.molecule.subgraph(&(0..start.synthon_atoms).collect::<Vec<_>>());
        assert_eq!(sub.bonds.len(), start.mol.bonds.len());
        for b in &start.mol.bonds {
            let k = sub.bond_between(b.a, b.b).expect("synthon bond kept");
            assert_eq!(sub.bonds[k].order, b.order);
        }
        for (i, a) in start.mol.atoms.iter().enumerate() {
            assert_eq!(c.molecule.atoms[i].element, a.element);
        }
        let replay = m.score_actions(&store, &start, &c.actions, &READOUT).unwrap();
        assert!((replay - c.log_prob).abs() < 1e-9);
        let summed: f64 = c.action_log_probs.iter().sum();
        assert!((summed - c.log_prob).abs() < 1e-9);
        assert!(c.actions.len() <= 4);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    let m = CompletionModel::new(&mut store, cfg(vocab()), &mut seeded_rng(5));
    let s = synthon("CC(=O)OC", (1, 3), 0);
    let o = m.cfg.vocab.iter().position(|x| *x == AttachItem::plain(Element::O, BondOrder::Single)).unwrap();
    let actions = [Action::AddAtom { anchor: 1, item: o }, Action::Stop];
    let steps = teacher_states(&PartialGraph::from_synthon(&s), &actions, &m.cfg.vocab, 0).unwrap();
    let (inputs, gold): (Vec<StepInput>, Vec<usize>) = steps.into_iter().unzip();
    let loss = |store: &ParamStore| {
        let mut t = Tape::new(store);
        let r = t.constant(Array2::from_shape_vec((1, 5), READOUT.to_vec()).unwrap());
        let z = m.latent(&mut t, r);
        let sc = m.step_scores(&mut t, &inputs, z).unwrap();
        let l = completion_loss(&mut t, &sc, &gold);
        (t.scalar(l), t.backward(l))
    };
    let (_, grads) = loss(&store);
    let mut rng = seeded_rng(9);
    use rand::Rng;
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.get(id).len();
        for _ in 0..3 {
            let k = rng.random_range(0..len);
            let orig = store.get(id).as_slice().unwrap()[k];
            let h = 1e-6;
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let up = loss(&store).0;
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let down = loss(&store).0;
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            assert!(rel < 1e-4 || (num - ana).abs() < 1e-7, "{}[{k}]: {ana} vs {num}", store.name(id));
        }
    }
}

#[test]
fn learns_a_leaving_group() {
    let schema = FeatureSchema::default();
    let rec = parse_reaction_record(
        "[CH3:1][C:2](=[O:3])Cl.[OH:4][CH3:5]>>[CH3:1][C:2](=[O:3])[O:4][CH3:5]",
        None,
        "t",
        &schema,
    )
    .unwrap();
    let synthons = extract_synthons(&rec.product, (1, 3), &schema).unwrap();
    let mut vocab = vocab();
    let mut items = Vec::new();
    for s in &synthons {
        let r = rec
            .reactants
            .iter()
            .find(|r| r.atom_maps.contains(&rec.product.atom_maps[s.origin_atoms[0]]))
            .unwrap();
        derive_actions(s, &rec.product, r, |it| {
            items.push(it);
            Some(0)
        })
        .unwrap();
    }
    vocab = build_vocab(vocab.into_iter().chain(items));
    let mut store = ParamStore::new();
    let m = CompletionModel::new(&mut store, cfg(vocab.clone()), &mut seeded_rng(6));
    let mut inputs = Vec::new();
    let mut gold = Vec::new();
    let mut golds = Vec::new();
    for s in &synthons {
        let r = rec
            .reactants
            .iter()
            .find(|r| r.atom_maps.contains(&rec.product.atom_maps[s.origin_atoms[0]]))
            .unwrap();
        let acts = derive_actions(s, &rec.product, r, |it| vocab.iter().position(|x| *x == it)).unwrap();
        for (st, g) in teacher_states(&PartialGraph::from_synthon(s), &acts, &vocab, 0).unwrap() {
            inputs.push(st);
            gold.push(g);
        }
        let mut gm = r.molecule.clone();
        gm.strip_maps();
        golds.push(canonical_molecule(&gm, true));
    }
    let mut opt = Adam::new(AdamConfig::new(0.01, 0.0, 200, 0.0), &store);
    for _ in 0..150 {
        let mut grads = {
            let mut t = Tape::new(&store);
            let r = t.constant(Array2::from_shape_vec((1, 5), READOUT.to_vec()).unwrap());
            let z = m.latent(&mut t, r);
            let sc = m.step_scores(&mut t, &inputs, z).unwrap();
            let l = completion_loss(&mut t, &sc, &gold);
            t.backward(l)
        };
        opt.step(&mut store, &mut grads);
    }
    let policy = ModelPolicy {
        model: &m,
        store: &store,
        readout: &READOUT,
    };
    for (s, g) in synthons.iter().zip(&golds) {
        let top = complete_synthon(&policy, s, 3).unwrap();
        assert_eq!(&canonical_molecule(&top[0].molecule, true), g);
    }

    let complete = |s: &Synthon| complete_synthon(&policy, s, 3);
    let set = generate_candidates("p", &rec.product, &[((1, 3), 0.9)], &complete, &BuiltinCanonicalizer, true, 3).unwrap();
    let mut want = [
        crate::chem::canonical_form("CC(=O)Cl", true).unwrap(),
        crate::chem::canonical_form("CO", true).unwrap(),
    ];
    want.sort();
    assert_eq!(set.items[0].key, want.join("."));
    assert!(set.items.len() <= 3);
    for w in set.items.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
}
