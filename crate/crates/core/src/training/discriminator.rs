//! Temporal waveform discriminator: strided 1-D convolutions, global average,
//! sigmoid.

use crate::audio::Waveform;
use crate::tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// (out channels, kernel, stride) per layer; the input has one channel.
pub const DISCRIMINATOR_LAYERS: [(usize, usize, usize); 4] = [(8, 16, 4), (16, 16, 4), (16, 8, 4), (1, 3, 1)];
const LEAK: f64 = 0.2;

#[derive(Debug)]
pub struct Discriminator<F> {
    pub params: ParamStore<F>,
}

impl<F: Real> Clone for Discriminator<F> {
    fn clone(&self) -> Self {
        Self { params: self.params.clone() }
    }
}

impl<F: Real> Discriminator<F> {
    /// Random weights, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut c_in = 1;
        for (i, &(c, k, _)) in DISCRIMINATOR_LAYERS.iter().enumerate() {
            p.add_normal(format!("d{i}.w"), c, c_in * k, (1.0 / (c_in * k) as f64).sqrt(), &mut rng);
            p.add_zeros(format!("d{i}.b"), c, 1);
            c_in = c;
        }
        Self { params: p }
    }

    pub fn cast<G: Real>(&self) -> Discriminator<G> {
        Discriminator { params: self.params.cast() }
    }

    /// Probability node (`1 × 1`) for a `[1 × N]` waveform node. Inputs shorter
    /// than the receptive field are zero-padded on the right.
    pub fn forward_graph(&self, g: &mut Graph<F>, wave: NodeId, trainable: bool) -> NodeId {
        let mut h = wave;
        let last = DISCRIMINATOR_LAYERS.len() - 1;
        for (i, &(_, k, s)) in DISCRIMINATOR_LAYERS.iter().enumerate() {
            let w = g.weight(&self.params, &format!("d{i}.w"), trainable);
            let b = g.weight(&self.params, &format!("d{i}.b"), trainable);
            let len = g.value(h).cols();
            let pad = if len < k { (k - len).div_ceil(2) } else { 0 };
            h = g.conv1d(h, w, k, s, pad);
            h = g.add_col(h, b);
            if i != last {
                h = g.leaky_relu(h, F::from_f64c(LEAK));
            }
        }
        let m = g.mean(h);
        g.sigmoid(m)
    }

    pub fn probability(&self, samples: &Tensor<F>) -> F {
        let mut g = Graph::new();
        let x = g.constant(samples.clone());
        let p = self.forward_graph(&mut g, x, false);
        g.value(p).item()
    }
}

impl Discriminator<f32> {
    /// D(w) in (0, 1).
    pub fn forward(&self, w: &Waveform) -> f32 {
        self.probability(&w.to_tensor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    #[test]
    fn zero_input_gives_half_and_outputs_in_range() {
        let d = Discriminator::<f32>::new(1);
        assert_eq!(d.forward(&Waveform::silence(5000, SAMPLE_RATE)), 0.5);
        let w = Waveform::new((0..3000).map(|i| (i as f32 * 0.37).sin()).collect(), SAMPLE_RATE).unwrap();
        let p = d.forward(&w);
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, d.forward(&w));
        let short = d.forward(&Waveform::new(vec![0.3; 5], SAMPLE_RATE).unwrap());
        assert!(short > 0.0 && short < 1.0);
    }
}
