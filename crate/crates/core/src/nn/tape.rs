//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; [`Tape::backward`]
//! returns their gradients.

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Array2<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// `(A + I)·x` for a symmetric adjacency list `A`.
    Propagate(Var, Vec<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Row `i` is added to output row `segment[i]`.
    SegmentSum(Var, Vec<usize>),
    Flatten(Var),
    RowNormalize(Var),
    LogSoftmaxRows(Var),
    /// Log-softmax within segments of a single row.
    SegmentLogSoftmax(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    SumAll(Var),
    /// Weighted binary cross-entropy on probabilities: weights per entry for
    /// the positive and negative terms.
    BceProbs {
        p: Var,
        target: Vec<f64>,
        pos_weight: f64,
        eps: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Parameter gradients, aligned with the store's parameter ids.
pub struct Gradients {
    pub grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        self.push(y, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    /// Adds a 1×w row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let y = self.value(a) + self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(0.0));
        self.push(y, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    pub fn propagate(&mut self, a: Var, adj: &[Vec<usize>]) -> Var {
        let x = self.value(a);
        let mut y = x.clone();
        for (i, nbrs) in adj.iter().enumerate() {
            for &j in nbrs {
                let row = x.row(j).to_owned();
                let mut yi = y.row_mut(i);
                yi += &row;
            }
        }
        self.push(y, Op::Propagate(a, adj.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(y, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let y = self.value(a).select(Axis(0), idx);
        self.push(y, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn segment_sum(&mut self, a: Var, segment: &[usize], count: usize) -> Var {
        let x = self.value(a);
        let mut y = Array2::zeros((count, x.ncols()));
        for (i, &s) in segment.iter().enumerate() {
            let mut ys = y.row_mut(s);
            ys += &x.row(i);
        }
        self.push(y, Op::SegmentSum(a, segment.to_vec()))
    }

    /// Column-wise sum, giving a 1×w row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).nrows();
        self.segment_sum(a, &vec![0; n], 1)
    }

    /// Row-major flattening into a single row.
    pub fn flatten(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let y = Array2::from_shape_vec((1, x.len()), x.iter().copied().collect()).unwrap();
        self.push(y, Op::Flatten(a))
    }

    /// Scales each row to unit Euclidean length.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for mut r in y.rows_mut() {
            let n = r.dot(&r).sqrt().max(NORM_EPS);
            r.mapv_inplace(|x| x / n);
        }
        self.push(y, Op::RowNormalize(a))
    }

    /// Row-wise log-softmax. Masked-out entries (`false`) get `-inf` and no
    /// gradient; the mask is row-major over the whole matrix.
    pub fn log_softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut y = Array2::from_elem(x.dim(), f64::NEG_INFINITY);
        for (i, row) in x.rows().into_iter().enumerate() {
            let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[i * cols + j]);
            let m = (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue;
            }
            let lse = m + (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| (row[j] - m).exp())
                .sum::<f64>()
                .ln();
            for j in (0..cols).filter(|&j| allowed(j)) {
                y[[i, j]] = row[j] - lse;
            }
        }
        self.push(y, Op::LogSoftmaxRows(a))
    }

    /// Log-softmax of a `1×k` row taken separately within each segment.
    /// Entries with `allowed[k] == false` get `-inf` and no gradient; a
    /// segment without allowed entries is all `-inf`.
    pub fn segment_log_softmax(&mut self, a: Var, segment: &[usize], count: usize, allowed: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), 1, "segment_log_softmax needs a single row");
        assert_eq!(x.ncols(), segment.len());
        let mut max = vec![f64::NEG_INFINITY; count];
        for k in 0..segment.len() {
            if allowed[k] {
                max[segment[k]] = max[segment[k]].max(x[[0, k]]);
            }
        }
        let mut sum = vec![0.0; count];
        for k in 0..segment.len() {
            if allowed[k] {
                sum[segment[k]] += (x[[0, k]] - max[segment[k]]).exp();
            }
        }
        let y = Array2::from_shape_fn((1, segment.len()), |(_, k)| {
            let s = segment[k];
            if allowed[k] {
                x[[0, k]] - max[s] - sum[s].ln()
            } else {
                f64::NEG_INFINITY
            }
        });
        self.push(y, Op::SegmentLogSoftmax(a, segment.to_vec()))
    }

    /// Selects individual entries into a 1×k row.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let y = Array2::from_shape_fn((1, at.len()), |(_, k)| x[at[k]]);
        self.push(y, Op::Pick(a, at.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(y, Op::SumAll(a))
    }

    /// `-Σ [w·t·log p + (1−t)·log(1−p)]` with `p` clamped to `[eps, 1−eps]`.
    pub fn bce_probs(&mut self, p: Var, target: &[f64], pos_weight: f64, eps: f64) -> Var {
        let x = self.value(p);
        assert_eq!(x.len(), target.len(), "target length must match probabilities");
        let loss: f64 = x
            .iter()
            .zip(target)
            .map(|(&pi, &t)| {
                let q = pi.clamp(eps, 1.0 - eps);
                -(pos_weight * t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::BceProbs {
                p,
                target: target.to_vec(),
                pos_weight,
                eps,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };
        for idx in (0..=loss.0).rev() {
            let Some(gy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Value::Param(id) = node.value {
                accumulate(&mut out.grads[id.0], gy);
                continue;
            }
            let y = self.value(Var(idx));
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = gy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gy);
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = gy.dot(self.value(*b));
                    let gb = gy.t().dot(self.value(*a));
                    accumulate(&mut g[a.0], ga);
                    accumulate(&mut g[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[a.0], gy.clone());
                    accumulate(&mut g[b.0], gy);
                }
                Op::AddRow(a, row) => {
                    let gr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut g[a.0], gy);
                    accumulate(&mut g[row.0], gr);
                }
                Op::Scale(a, c) => accumulate(&mut g[a.0], gy * *c),
                Op::Relu(a) => {
                    let mut ga = gy;
                    ga.zip_mut_with(y, |gv, &yv| {
                        if yv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    accumulate(&mut g[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = gy;
                    ga.zip_mut_with(y, |gv, &yv| *gv *= yv * (1.0 - yv));
                    accumulate(&mut g[a.0], ga);
                }
                Op::Propagate(a, adj) => {
                    let mut ga = gy.clone();
                    for (i, nbrs) in adj.iter().enumerate() {
                        for &j in nbrs {
                            let row = gy.row(i).to_owned();
                            let mut gj = ga.row_mut(j);
                            gj += &row;
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut g[p.0], gy.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        accumulate(&mut g[p.0], gy.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut r = ga.row_mut(i);
                        r += &gy.row(k);
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::SegmentSum(a, seg) => {
                    let ga = gy.select(Axis(0), seg);
                    accumulate(&mut g[a.0], ga);
                }
                Op::Flatten(a) => {
                    let dim = self.value(*a).dim();
                    let ga = Array2::from_shape_vec(dim, gy.iter().copied().collect()).unwrap();
                    accumulate(&mut g[a.0], ga);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let n = x.row(i).dot(&x.row(i)).sqrt().max(NORM_EPS);
                        let yr = y.row(i);
                        let gr = gy.row(i);
                        let proj = yr.dot(&gr);
                        let mut out = ga.row_mut(i);
                        out.assign(&((&gr - &(&yr * proj)) / n));
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let total: f64 = gy.row(i).iter().zip(y.row(i)).filter(|(_, yv)| yv.is_finite()).map(|(gv, _)| gv).sum();
                        for j in 0..y.ncols() {
                            let yv = y[[i, j]];
                            if yv.is_finite() {
                                ga[[i, j]] = gy[[i, j]] - yv.exp() * total;
                            }
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::SegmentLogSoftmax(a, seg) => {
                    let count = seg.iter().max().map_or(0, |m| m + 1);
                    let mut total = vec![0.0; count];
                    for k in 0..seg.len() {
                        if y[[0, k]].is_finite() {
                            total[seg[k]] += gy[[0, k]];
                        }
                    }
                    let mut ga = Array2::zeros(y.dim());
                    for k in 0..seg.len() {
                        let yv = y[[0, k]];
                        if yv.is_finite() {
                            ga[[0, k]] = gy[[0, k]] - yv.exp() * total[seg[k]];
                        }
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::Pick(a, at) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (k, &ij) in at.iter().enumerate() {
                        ga[ij] += gy[[0, k]];
                    }
                    accumulate(&mut g[a.0], ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), gy[[0, 0]]);
                    accumulate(&mut g[a.0], ga);
                }
                Op::BceProbs {
                    p,
                    target,
                    pos_weight,
                    eps,
                } => {
                    let x = self.value(*p);
                    let scale = gy[[0, 0]];
                    let mut ga = Array2::zeros(x.dim());
                    for ((gv, &pi), &t) in ga.iter_mut().zip(x.iter()).zip(target) {
                        if pi > *eps && pi < 1.0 - eps {
                            *gv = scale * (-(pos_weight * t) / pi + (1.0 - t) / (1.0 - pi));
                        }
                    }
                    accumulate(&mut g[p.0], ga);
                }
            }
        }
        out
    }
}

const NORM_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Central-difference check of every parameter entry.
    fn check<F>(store: &mut ParamStore, f: F)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let grads = {
            let mut t = Tape::new(store);
            let l = f(&mut t);
            t.backward(l)
        };
        let h = 1e-6;
        for id in store.ids() {
            let n = store.get(id).len();
            for k in 0..n {
                let orig = store.get(id).as_slice().unwrap()[k];
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
                let up = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
                let down = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[k]);
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-7);
                assert!(rel < 1e-5 || (num - ana).abs() < 1e-8, "param {} entry {k}: {ana} vs {num}", store.name(id));
            }
        }
    }

    #[test]
    fn matmul_relu_sigmoid_chain() {
        let mut s = ParamStore::new();
        let w = s.insert("w", array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]]);
        let b = s.insert("b", array![[0.05, -0.1, 0.2]]);
        let x = array![[1.0, 2.0], [-1.5, 0.5], [0.3, -0.7]];
        check(&mut s, |t| {
            let xv = t.constant(x.clone());
            let wv = t.param(w);
            let bv = t.param(b);
            let h = t.matmul(xv, wv);
            let h = t.add_row(h, bv);
            let h = t.relu(h);
            let h = t.sigmoid(h);
            let h = t.scale(h, 1.7);
            t.sum_all(h)
        });
    }

    #[test]
    fn propagate_gather_segment() {
        let mut s = ParamStore::new();
        let w = s.insert("w", array![[0.3, -0.2], [0.1, 0.4]]);
        let adj = vec![vec![1], vec![0, 2], vec![1], vec![]];
        check(&mut s, |t| {
            let x = t.constant(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -0.5]]);
            let wv = t.param(w);
            let h = t.matmul(x, wv);
            let h = t.propagate(h, &adj);
            let h = t.sigmoid(h);
            let seg = t.segment_sum(h, &[0, 0, 0, 1], 2);
            let g = t.gather_rows(seg, &[1, 0, 0]);
            let f = t.flatten(g);
            let c = t.concat_cols(&[f, f]);
            let sq = t.matmul_t(c, c);
            t.sum_all(sq)
        });
    }

    #[test]
    fn normalize_log_softmax_pick() {
        let mut s = ParamStore::new();
        let w = s.insert("w", array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.3], [0.7, -0.1, 0.2]]);
        check(&mut s, |t| {
            let wv = t.param(w);
            let n = t.row_normalize(wv);
            let sim = t.matmul_t(n, n);
            let mask = vec![true, false, true, true, true, true, false, true, true];
            let ls = t.log_softmax_rows(sim, Some(mask));
            let p = t.pick(ls, &[(0, 2), (1, 0), (2, 1)]);
            let r = t.concat_rows(&[p, p]);
            t.sum_all(r)
        });
    }

    #[test]
    fn bce_gradient() {
        let mut s = ParamStore::new();
        let w = s.insert("w", array![[0.3, -1.2, 0.9, 0.1]]);
        check(&mut s, |t| {
            let wv = t.param(w);
            let p = t.sigmoid(wv);
            t.bce_probs(p, &[1.0, 0.0, 0.0, 1.0], 20.0, 1e-7)
        });
    }

    #[test]
    fn bce_uniform_half() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let p = t.constant(Array2::from_elem((1, 6), 0.5));
        let l = t.bce_probs(p, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 20.0, 1e-7);
        let expected = 20.0 * 2f64.ln() * 2.0 + 4.0 * 2f64.ln();
        assert_abs_diff_eq!(t.scalar(l), expected, epsilon = 1e-12);
    }

    #[test]
    fn masked_entries_are_neg_infinite() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0, 2.0, 3.0]]);
        let y = t.log_softmax_rows(x, Some(vec![true, false, true]));
        let v = t.value(y);
        assert!(v[[0, 1]].is_infinite());
        assert_abs_diff_eq!(v[[0, 0]].exp() + v[[0, 2]].exp(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn segment_log_softmax_gradient() {
        let mut s = ParamStore::new();
        let w = s.insert("w", array![[0.3, -1.2, 0.9, 0.1, 2.0, -0.4]]);
        check(&mut s, |t| {
            let wv = t.param(w);
            let y = t.segment_log_softmax(wv, &[1, 0, 1, 0, 1, 2], 3, &[true, true, true, false, true, true]);
            let p = t.pick(y, &[(0, 0), (0, 1), (0, 4), (0, 5)]);
            let sq = t.matmul_t(p, p);
            t.sum_all(sq)
        });
    }

    #[test]
    fn segments_normalize_independently() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(array![[1.0, 2.0, 3.0, -1.0, 0.5]]);
        let y = t.segment_log_softmax(x, &[0, 1, 0, 1, 1], 2, &[true; 5]);
        let v = t.value(y);
        assert_abs_diff_eq!(v[[0, 0]].exp() + v[[0, 2]].exp(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 1]].exp() + v[[0, 3]].exp() + v[[0, 4]].exp(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
