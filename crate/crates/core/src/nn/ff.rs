//! Multi-layer perceptron heads.

use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub layers: Vec<(ParamId, ParamId)>,
    pub dims: Vec<usize>,
}

impl FeedForward {
    /// `dims = [input, hidden.., output]`; ReLU between layers, linear output.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let weight = store.insert_uniform(&format!("{prefix}.w{k}"), w[0], w[1], rng);
                let bias = store.insert_zeros(&format!("{prefix}.b{k}"), 1, w[1]);
                (weight, bias)
            })
            .collect();
        FeedForward {
            layers,
            dims: dims.to_vec(),
        }
    }

    /// Re-binds to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str, depth: usize) -> Option<Self> {
        let mut layers = Vec::new();
        let mut dims = Vec::new();
        for k in 0..depth {
            let w = store.id(&format!("{prefix}.w{k}"))?;
            let b = store.id(&format!("{prefix}.b{k}"))?;
            if k == 0 {
                dims.push(store.get(w).nrows());
            }
            dims.push(store.get(w).ncols());
            layers.push((w, b));
        }
        Some(FeedForward { layers, dims })
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = t.param(w);
            let bv = t.param(b);
            h = t.matmul(h, wv);
            h = t.add_row(h, bv);
            if k + 1 < self.layers.len() {
                h = t.relu(h);
            }
        }
        h
    }
}
