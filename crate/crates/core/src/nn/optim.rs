//! Adaptive-moment optimizer with decoupled weight decay, linear warmup and
//! global-norm clipping.

use ndarray::Array2;

use super::params::ParamStore;
use super::tape::Gradients;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64, total_steps: usize, warmup_ratio: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps: (total_steps as f64 * warmup_ratio).ceil() as usize,
            clip_norm: 5.0,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |_| -> Vec<Array2<f64>> { store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect() };
        Adam {
            cfg,
            m: zeros(()),
            v: zeros(()),
            step: 0,
        }
    }

    /// Learning rate for the next step: linear ramp, then constant.
    pub fn current_lr(&self) -> f64 {
        if self.cfg.warmup_steps == 0 {
            return self.cfg.lr;
        }
        self.cfg.lr * ((self.step + 1) as f64 / self.cfg.warmup_steps as f64).min(1.0)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Clips, then applies one update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut Gradients) -> f64 {
        let norm = grads.global_norm();
        if norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (1.0 - b1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (1.0 - b2) * gi * gi);
            let p = store.get_mut(id);
            let wd = self.cfg.weight_decay;
            let eps = self.cfg.eps;
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                let update = (mi / c1) / ((vi / c2).sqrt() + eps);
                *pi -= lr * (update + wd * *pi);
            });
        }
        norm
    }
}
