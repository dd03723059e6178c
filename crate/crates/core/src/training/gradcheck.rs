//! Central finite-difference check of analytic gradients, in f64.

use crate::tensor::{Graph, NodeId, ParamStore};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Step size. Kept small because leaky ReLU and L1 terms have kinks that a
    /// wide step straddles whenever a bias feeds hundreds of positions.
    pub epsilon: f64,
    /// Coordinates checked per parameter tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Lower bound of the relative-error denominator, so that gradients near
    /// zero are compared in absolute terms.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, coords_per_tensor: 6, seed: 0, denom_floor: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |g_a - g_fd| / max(floor, |g_a|, |g_fd|) over the checked coordinates.
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Name of the tensor holding the worst coordinate.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the graph gradient of `loss` with central differences for a
/// sample of coordinates of every parameter tensor in `store(model)`.
///
/// `loss` must rebuild the graph from the model's current weights and mark
/// those weights trainable.
pub fn grad_check<M>(
    model: &mut M,
    store: impl Fn(&mut M) -> &mut ParamStore<f64>,
    loss: impl Fn(&M, &mut Graph<f64>) -> NodeId,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let eval = |m: &M| {
        let mut g = Graph::new();
        let l = loss(m, &mut g);
        g.value(l).item()
    };
    let analytic = {
        let mut g = Graph::new();
        let l = loss(model, &mut g);
        let grads = g.backward(l);
        let s = store(model);
        grads.dense_for(s)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store(model).ids().collect();
    let mut report = GradCheckReport { max_rel_err: 0.0, coords_checked: 0, worst: String::new() };
    for (ti, id) in ids.into_iter().enumerate() {
        let n = store(model).get(id).len();
        let picks: Vec<usize> = if n <= opts.coords_per_tensor { (0..n).collect() } else { sample(&mut rng, n, opts.coords_per_tensor).into_vec() };
        for i in picks {
            let orig = store(model).get(id).data()[i];
            store(model).get_mut(id).data_mut()[i] = orig + opts.epsilon;
            let up = eval(model);
            store(model).get_mut(id).data_mut()[i] = orig - opts.epsilon;
            let down = eval(model);
            store(model).get_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * opts.epsilon);
            let ga = analytic[ti].data()[i];
            let rel = (ga - fd).abs() / opts.denom_floor.max(ga.abs()).max(fd.abs());
            report.coords_checked += 1;
            if report.worst.is_empty() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{}[{i}]", store(model).name(id));
            }
        }
    }
    report
}
