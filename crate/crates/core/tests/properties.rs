use codec_tts::audio::{mel_frame_count, mel_spectrogram, read_wav_bytes, Waveform, HOP, SAMPLE_RATE};
use codec_tts::codec::{codec_frame_count, rvq_quantize};
use codec_tts::pipeline::{bucket_of, corpus_stats, normalize_words, Manifest, ManifestRecord};
use codec_tts::tensor::Tensor;
use codec_tts::text::bpe_train;
use codec_tts::tokens::{TokenSequence, EOS, PAD, SOS};
use proptest::prelude::*;

fn record(duration: f64, transcript: String) -> ManifestRecord {
    ManifestRecord { path: "x.wav".into(), speaker: "s".into(), duration, transcript }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn frame_counts_follow_the_hop(n in 0usize..200_000) {
        prop_assert_eq!(codec_frame_count(n), n / HOP);
        prop_assert_eq!(mel_frame_count(n), 1 + n / HOP);
    }

    #[test]
    fn mel_has_one_frame_per_hop_plus_one(n in 1usize..6000) {
        let w = Waveform::new((0..n).map(|i| (i as f32 * 0.01).sin() * 0.3).collect(), SAMPLE_RATE).unwrap();
        let m = mel_spectrogram(&w);
        prop_assert_eq!(m.n_frames(), 1 + n / HOP);
        prop_assert!(m.frames.data().iter().all(|v| v.is_finite() && *v >= (1e-5f32).ln() - 1e-4));
    }

    #[test]
    fn wav_roundtrip_within_one_lsb(samples in prop::collection::vec(-1.0f32..1.0, 1..800)) {
        let w = Waveform::new(samples.clone(), SAMPLE_RATE).unwrap();
        let back = read_wav_bytes(&w.to_wav_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
        }
    }

    #[test]
    fn bpe_roundtrips_any_text(text in "[a-z ,.!?éü]{0,60}", extra in "[a-z ]{1,40}") {
        let model = bpe_train(&[&extra, "the cat sat on the mat", &text], 300).unwrap();
        let ids = model.encode_unbounded(&text);
        prop_assert_eq!(model.decode(&ids).unwrap(), text);
    }

    #[test]
    fn rvq_residuals_never_grow(latent in prop::collection::vec(-3.0f32..3.0, 8), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let books: Vec<Tensor<f32>> = (0..4).map(|_| Tensor::from_fn(32, 8, |r, _| if r == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) })).collect();
        let code = rvq_quantize(&latent, &books);
        let mut prev = latent.iter().map(|v| v * v).sum::<f32>().sqrt();
        for &r in &code.residual_norms {
            prop_assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn token_sequences_reject_specials(ids in prop::collection::vec(0u32..1024, 0..50), special in prop::sample::select(vec![SOS, EOS, PAD])) {
        prop_assert!(TokenSequence::audio(ids.clone()).is_ok());
        let mut bad = ids;
        bad.push(special);
        prop_assert!(TokenSequence::audio(bad).is_err());
    }

    #[test]
    fn corpus_stats_ignore_order(durations in prop::collection::vec(0.1f64..20.0, 1..30), seed in 0u64..100) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let words = ["Alpha", "beta,", "GAMMA.", "delta!", "(beta)"];
        let records: Vec<_> = durations.iter().enumerate().map(|(i, &d)| record(d, words[..1 + i % words.len()].join(" "))).collect();
        let m = Manifest::new(records).unwrap();
        let mut shuffled = m.clone();
        shuffled.records.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = corpus_stats(&m).unwrap();
        prop_assert_eq!(&a, &corpus_stats(&shuffled).unwrap());
        prop_assert!((a.hours * 3600.0 - a.mean_audio_length * a.total_recordings as f64).abs() < 1e-9);
    }

    #[test]
    fn normalized_words_are_lowercase_and_trimmed(text in "[A-Za-z,.;!? ]{0,80}") {
        for w in normalize_words(&text) {
            prop_assert!(!w.is_empty());
            prop_assert_eq!(w.to_lowercase(), w.clone());
            prop_assert!(w.chars().next().unwrap().is_alphanumeric() && w.chars().last().unwrap().is_alphanumeric());
        }
    }

    #[test]
    fn length_buckets_partition(n in 1usize..5000) {
        prop_assert!(bucket_of(n).is_some());
    }
}
