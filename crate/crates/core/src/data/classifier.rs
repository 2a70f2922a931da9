//! Ten-way reaction-type classifier over precomputed embeddings.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrexError};
use crate::nn::{Adam, AdamConfig, FeedForward, ParamStore, Tape};

pub const TYPE_COUNT: usize = 10;

/// Which embeddings feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeFeatures {
    /// Product graph only.
    Product,
    /// Product graph and product text.
    ProductText,
    /// Product graph, product text and reactant graphs.
    ProductTextReactants,
}

impl TypeFeatures {
    pub fn width(self, graph: usize, text: usize) -> usize {
        match self {
            TypeFeatures::Product => graph,
            TypeFeatures::ProductText => graph + text,
            TypeFeatures::ProductTextReactants => 2 * graph + text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSample {
    pub product: Vec<f64>,
    pub text: Option<Vec<f64>>,
    pub reactants: Option<Vec<f64>>,
    /// Class in `1..=10`.
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct TypeClassifier {
    pub features: TypeFeatures,
    pub head: FeedForward,
}

impl TypeClassifier {
    pub fn new(store: &mut ParamStore, features: TypeFeatures, graph: usize, text: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let head = FeedForward::new(store, "type.ff", &[features.width(graph, text), hidden, TYPE_COUNT], rng);
        TypeClassifier { features, head }
    }

    fn row(&self, product: &[f64], text: Option<&[f64]>, reactants: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut v = product.to_vec();
        let need_text = self.features != TypeFeatures::Product;
        let need_reactants = self.features == TypeFeatures::ProductTextReactants;
        match (need_text, text) {
            (true, Some(t)) => v.extend_from_slice(t),
            (true, None) => return Err(TrexError::ShapeMismatch("classifier variant needs product text".into())),
            _ => {}
        }
        match (need_reactants, reactants) {
            (true, Some(r)) => v.extend_from_slice(r),
            (true, None) => return Err(TrexError::ShapeMismatch("classifier variant needs reactant graphs".into())),
            _ => {}
        }
        if v.len() != self.head.input_width() {
            return Err(TrexError::ShapeMismatch(format!(
                "classifier expects width {}, got {}",
                self.head.input_width(),
                v.len()
            )));
        }
        Ok(v)
    }

    fn matrix(&self, samples: &[&TypeSample]) -> Result<Array2<f64>> {
        let w = self.head.input_width();
        let mut m = Array2::zeros((samples.len(), w));
        for (i, s) in samples.iter().enumerate() {
            let row = self.row(&s.product, s.text.as_deref(), s.reactants.as_deref())?;
            m.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        }
        Ok(m)
    }

    /// Cross-entropy training with Adam; returns the mean loss per epoch.
    pub fn train(&self, store: &mut ParamStore, samples: &[TypeSample], epochs: usize, batch: usize, lr: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let batch = batch.max(1);
        let steps = epochs * samples.len().div_ceil(batch);
        let mut opt = Adam::new(AdamConfig::new(lr, 0.01, steps, 0.1), store);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let picked: Vec<&TypeSample> = chunk.iter().map(|&i| &samples[i]).collect();
                let x = self.matrix(&picked)?;
                let mut t = Tape::new(store);
                let xv = t.constant(x);
                let logits = self.head.forward(&mut t, xv);
                let ls = t.log_softmax_rows(logits, None);
                let at: Vec<(usize, usize)> = picked.iter().enumerate().map(|(i, s)| (i, s.label as usize - 1)).collect();
                let p = t.pick(ls, &at);
                let s = t.sum_all(p);
                let loss = t.scale(s, -1.0 / picked.len() as f64);
                total += t.scalar(loss) * picked.len() as f64;
                let mut g = t.backward(loss);
                drop(t);
                opt.step(store, &mut g);
            }
            curve.push(total / samples.len().max(1) as f64);
        }
        Ok(curve)
    }
}

/// Argmax class in `1..=10` (lowest index wins ties) and the class
/// probabilities.
pub fn predict_reaction_type(
    clf: &TypeClassifier,
    store: &ParamStore,
    product: &[f64],
    text: Option<&[f64]>,
    reactants: Option<&[f64]>,
) -> Result<(u8, Vec<f64>)> {
    let row = clf.row(product, text, reactants)?;
    let mut t = Tape::new(store);
    let x = t.constant(Array2::from_shape_vec((1, row.len()), row).expect("row"));
    let logits = clf.head.forward(&mut t, x);
    let ls = t.log_softmax_rows(logits, None);
    let probs: Vec<f64> = t.value(ls).iter().map(|v| v.exp()).collect();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best as u8 + 1, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn variant_widths() {
        let mut store = ParamStore::new();
        let c = TypeClassifier::new(&mut store, TypeFeatures::Product, 512, 1280, 8, &mut seeded_rng(0));
        assert_eq!(c.head.input_width(), 512);
        assert_eq!(TypeFeatures::ProductText.width(512, 1280), 1792);
        assert_eq!(TypeFeatures::ProductTextReactants.width(512, 1280), 2304);
        assert!(matches!(
            predict_reaction_type(&c, &store, &[0.0; 511], None, None),
            Err(TrexError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn uniform_head_picks_first_class() {
        let mut store = ParamStore::new();
        let c = TypeClassifier::new(&mut store, TypeFeatures::ProductText, 3, 2, 4, &mut seeded_rng(0));
        for &(w, b) in &c.head.layers {
            store.get_mut(w).fill(0.0);
            store.get_mut(b).fill(0.0);
        }
        let (cls, p) = predict_reaction_type(&c, &store, &[1.0, 2.0, 3.0], Some(&[0.5, 0.5]), None).unwrap();
        assert_eq!(cls, 1);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-12));
        assert!(predict_reaction_type(&c, &store, &[1.0, 2.0, 3.0], None, None).is_err());
    }

    #[test]
    fn learns_separable_types() {
        let mut rng = seeded_rng(4);
        let samples: Vec<TypeSample> = (0..60)
            .map(|i| {
                let label = (i % 3) as u8 + 1;
                let mut product = vec![0.0; 3];
                product[label as usize - 1] = 1.0;
                TypeSample {
                    product,
                    text: None,
                    reactants: None,
                    label,
                }
            })
            .collect();
        let mut store = ParamStore::new();
        let c = TypeClassifier::new(&mut store, TypeFeatures::Product, 3, 0, 16, &mut rng);
        let curve = c.train(&mut store, &samples, 60, 8, 1e-2, &mut rng).unwrap();
        assert!(curve.last().unwrap() < &curve[0]);
        for s in &samples[..3] {
            assert_eq!(predict_reaction_type(&c, &store, &s.product, None, None).unwrap().0, s.label);
        }
    }
}
