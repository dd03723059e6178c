use crate::tensor::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay applied to matrices only (biases, gains
/// and other single-row tensors are not decayed).
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    cfg: AdamWConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    steps: usize,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamWConfig) -> Self {
        let zeros: Vec<Tensor<F>> = store.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { cfg, m: zeros.clone(), v: zeros, steps: 0 }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// Applies one update; `grads` is aligned with `store` order.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Tensor<F>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient count");
        self.steps += 1;
        let t = self.steps as i32;
        let b1 = F::from_f64c(self.cfg.beta1);
        let b2 = F::from_f64c(self.cfg.beta2);
        let one = F::one();
        let bc1 = F::from_f64c(1.0 - self.cfg.beta1.powi(t));
        let bc2 = F::from_f64c(1.0 - self.cfg.beta2.powi(t));
        let eps = F::from_f64c(self.cfg.eps);
        let lr_f = F::from_f64c(lr);
        let decay = F::from_f64c(1.0 - lr * self.cfg.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let decayed = p.rows() > 1 && p.cols() > 1;
            let g = &grads[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                if decayed {
                    *pv = *pv * decay;
                }
                *pv = *pv - lr_f * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Sum of squared gradient entries, square-rooted.
pub fn global_norm<F: Real>(grads: &[Tensor<F>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt()
}

/// Scales gradients in place so their global norm is at most `max_norm`.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let s = F::from_f64c(max_norm / n);
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_minimizes_quadratic_and_counts_steps() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_vec(2, 2, vec![3.0, -2.0, 1.0, 4.0]));
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..2000 {
            let g = store.get(id).map(|x| 2.0 * x);
            opt.step(&mut store, &[g], 0.01);
        }
        assert_eq!(opt.steps(), 2000);
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn weight_decay_skips_vectors() {
        let mut store = ParamStore::<f64>::new();
        store.add("m", Tensor::full(2, 2, 1.0));
        store.add("b", Tensor::full(1, 2, 1.0));
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.5, ..Default::default() });
        opt.step(&mut store, &[Tensor::zeros(2, 2), Tensor::zeros(1, 2)], 0.1);
        assert!((store.get(store.id("m").unwrap()).get(0, 0) - 0.95).abs() < 1e-12);
        assert_eq!(store.get(store.id("b").unwrap()).get(0, 0), 1.0);
    }
}
