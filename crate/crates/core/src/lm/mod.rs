//! Codec language model: autoregressive transformer over audio tokens,
//! conditioned on text and speaker embeddings through cross-attention.

mod config;
mod generate;
mod model;

pub use config::{count_parameters, LmConfig, MAX_AUDIO_TOKENS};
pub use generate::{sample_token, KvCache, Sampling, Session};
pub use model::{CodecLm, CrossKv, LmNet};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};
    use crate::tokens::SOS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> LmNet<f32> {
        LmNet::new(LmConfig::new(32, 2, 2).with_seed(3)).unwrap()
    }

    fn cond(h: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Tensor::from_fn(5, h, |_, _| rng.gen_range(-1.0..1.0)), Tensor::from_fn(9, 256, |_, _| rng.gen_range(-0.1..0.1)))
    }

    #[test]
    fn small_preset_parameter_count() {
        // hand-expanded per-layer shapes for H=512, F=2048
        let per_block = 4 * (512 * 512 + 512) * 2 + 2 * (512 * 512 + 512) + 2 * (256 * 512 + 512) + 6 * 512 + (512 * 2048 + 2048) + (2048 * 512 + 512);
        assert_eq!(per_block, 4_992_512);
        let expected = 1027 * 512 + 604 * 512 + 6 * per_block + 512 * 1027 + 1027;
        assert_eq!(count_parameters(&LmConfig::small()), expected);
        let (s, m, l) = (count_parameters(&LmConfig::small()), count_parameters(&LmConfig::medium()), count_parameters(&LmConfig::large()));
        assert!(s < m && m < l);
        let net = tiny();
        assert_eq!(net.params.num_scalars(), count_parameters(&net.cfg));
    }

    #[test]
    fn logits_shape_and_graph_agreement() {
        let net = tiny();
        let (text, spk) = cond(32, 1);
        let tokens = [SOS, 5, 900, 17, 1023, 3, 3, 3, 40, 41];
        let logits = net.forward(&tokens, &text, &spk).unwrap();
        assert_eq!(logits.shape(), (10, 1027));
        let mut g = Graph::new();
        let t = g.constant(text.clone());
        let s = g.constant(spk.clone());
        let l = net.logits_graph(&mut g, &tokens, t, s, true);
        assert!(g.value(l).max_abs_diff(&logits) < 1e-5);
    }

    #[test]
    fn cache_matches_full_forward_exactly() {
        let net = tiny();
        let (text, spk) = cond(32, 2);
        let tokens = [SOS, 9, 8, 7, 600, 1, 2];
        let full = net.forward(&tokens, &text, &spk).unwrap();
        let mut sess = Session::new(&net, &text, &spk).unwrap();
        for (i, &t) in tokens.iter().enumerate() {
            let row = sess.step(t).unwrap();
            assert_eq!(row.as_slice(), full.row(i));
        }
        assert_eq!(sess.cache().len(), tokens.len());
    }

    #[test]
    fn generation_is_bounded_and_deterministic() {
        let net = tiny();
        let (text, spk) = cond(32, 4);
        let a = net.generate_raw(&text, &spk, Sampling::Greedy, 0).unwrap();
        assert!(a.len() <= MAX_AUDIO_TOKENS && a.is_audio_only());
        assert_eq!(a, net.generate_raw(&text, &spk, Sampling::Greedy, 9).unwrap());
        let topk = Sampling::TopK { k: 5, temperature: 0.9 };
        assert_eq!(net.generate_raw(&text, &spk, topk, 1).unwrap(), net.generate_raw(&text, &spk, topk, 1).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = tiny();
        let (text, spk) = cond(32, 5);
        assert!(net.forward(&[SOS; 605], &text, &spk).is_err());
        assert!(net.forward(&[1027], &text, &spk).is_err());
        assert!(net.forward(&[SOS], &Tensor::zeros(3, 31), &spk).is_err());
        assert!(net.forward(&[SOS], &text, &Tensor::zeros(3, 255)).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let cfg = LmConfig::new(128, 2, 2).with_ffn(256).with_seed(11);
        assert_eq!(LmConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut kv = crate::checkpoint::KeyValues::new();
        kv.set("preset", "S");
        kv.set("ffn_dim", 1024);
        assert_eq!(LmConfig::from_kv(&kv).unwrap(), LmConfig::small().with_ffn(1024));
        let dir = tempfile::tempdir().unwrap();
        let net = tiny();
        net.save(dir.path().join("lm.bin")).unwrap();
        assert_eq!(CodecLm::load(dir.path().join("lm.bin")).unwrap().checksum(), net.checksum());
    }
}
