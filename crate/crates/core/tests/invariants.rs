//! Model and ranking invariants over generated inputs.

mod common;

use ndarray::Array2;
use proptest::prelude::*;

use trex_core::chem::canon::canonical_molecule;
use trex_core::chem::FeatureSchema;
use trex_core::gnn::{encode_graph, Aggregation, RgcnParams, RgcnSpec};
use trex_core::nn::{seeded_rng, ParamStore, Tape};
use trex_core::rerank::{contrastive_term, select_topk};

fn perm_of(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut seeded_rng(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rgcn_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..18, pseed in any::<u64>(), agg in 0usize..3) {
        let agg = [Aggregation::Sum, Aggregation::Mean, Aggregation::Concat][agg];
        let g = common::random_graph(&mut seeded_rng(seed), n);
        let mut store = ParamStore::new();
        let spec = RgcnSpec { input_width: FeatureSchema::default().width(), hidden: 8, layers: 2, bond_types: 4, agg };
        let p = RgcnParams::new(&mut store, "r", spec, &mut seeded_rng(seed ^ 1));
        let perm = perm_of(g.n, pseed);
        let (h, r) = encode_graph(&store, &p, &g).unwrap();
        let (hp, rp) = encode_graph(&store, &p, &g.permuted(&perm)).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            for (a, b) in h.row(old).iter().zip(hp.row(new).iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        for (a, b) in r.iter().zip(rp.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_form_ignores_atom_order(seed in any::<u64>(), n in 1usize..16, pseed in any::<u64>()) {
        let g = common::random_graph(&mut seeded_rng(seed), n);
        let perm = perm_of(g.n, pseed);
        prop_assert_eq!(canonical_molecule(&g.molecule, true), canonical_molecule(&g.permuted(&perm).molecule, true));
    }

    #[test]
    fn contrastive_term_of_identical_rows(m in 1usize..12, row in prop::collection::vec(-3.0f64..3.0, 4)) {
        prop_assume!(row.iter().any(|v| v.abs() > 1e-3));
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Array2::from_shape_fn((m, 4), |(_, j)| row[j]));
        let c = contrastive_term(&mut t, x);
        let m = m as f64;
        prop_assert!((t.scalar(c) - m * (m - 1.0) * m.ln()).abs() < 1e-9);
    }

    #[test]
    fn topk_selection_is_a_sorted_prefix(a in prop::collection::vec(0.0f64..1.0, 1..12), k in 1usize..12) {
        let stage1: Vec<f64> = (0..a.len()).map(|i| -(i as f64)).collect();
        let picked = select_topk(&stage1, &a, k);
        prop_assert_eq!(picked.len(), k.min(a.len()));
        let full = select_topk(&stage1, &a, a.len());
        prop_assert_eq!(&full[..picked.len()], &picked[..]);
        let mut sorted = full.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..a.len()).collect::<Vec<_>>());
        prop_assert!(full.windows(2).all(|w| a[w[0]] >= a[w[1]]));
    }
}
