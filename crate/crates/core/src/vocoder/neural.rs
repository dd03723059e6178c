use crate::audio::{MelSpectrogram, Waveform, HOP, N_MELS, SAMPLE_RATE};
use crate::checkpoint::KeyValues;
use crate::error::{Error, Result};
use crate::speaker::D_SPK;
use crate::tensor::{Graph, NodeId, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upsampling factors; their product is the hop.
pub const UPSAMPLE: [usize; 4] = [7, 7, 3, 2];
const LEAK: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocoderConfig {
    /// Width after the input conv and after each upsampling stage.
    pub channels: [usize; 5],
    pub d_spk: usize,
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self { channels: [64, 32, 16, 8, 8], d_spk: D_SPK, seed: 0x70C }
    }
}

impl VocoderConfig {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("channels", self.channels.map(|c| c.to_string()).join(","));
        kv.set("d_spk", self.d_spk);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let ch: Vec<usize> = kv
            .require::<String>("channels")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Checkpoint(format!("bad channels entry {s:?}"))))
            .collect::<Result<_>>()?;
        let channels: [usize; 5] = ch.try_into().map_err(|_| Error::Checkpoint("channels needs 5 entries".into()))?;
        Ok(Self { channels, d_spk: kv.require("d_spk")?, seed: kv.require("seed")? })
    }
}

/// Transposed-conv generator from mel frames to samples, with the mean speaker
/// vector projected to a per-channel bias after the input layer.
#[derive(Debug)]
pub struct VocoderNet<F> {
    pub cfg: VocoderConfig,
    pub params: ParamStore<F>,
}

impl<F: Real> Clone for VocoderNet<F> {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg.clone(), params: self.params.clone() }
    }
}

impl<F: Real> VocoderNet<F> {
    pub fn new(cfg: VocoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::new();
        let c = cfg.channels;
        p.add_normal("in.w", c[0], N_MELS * 3, (1.0 / (N_MELS * 3) as f64).sqrt(), &mut rng);
        p.add_zeros("in.b", c[0], 1);
        p.add_normal("spk.w", c[0], cfg.d_spk, (1.0 / cfg.d_spk as f64).sqrt(), &mut rng);
        for (i, &s) in UPSAMPLE.iter().enumerate() {
            let (ci, co) = (c[i], c[i + 1]);
            p.add_normal(format!("up{i}.w"), ci, co * s, (1.0 / ci as f64).sqrt(), &mut rng);
            p.add_zeros(format!("up{i}.b"), co, 1);
            p.add_normal(format!("res{i}.w"), co, co * 3, (1.0 / (co * 3) as f64).sqrt(), &mut rng);
            p.add_zeros(format!("res{i}.b"), co, 1);
        }
        p.add_normal("out.w", 1, c[4] * 3, (1.0 / (c[4] * 3) as f64).sqrt(), &mut rng);
        p.add_zeros("out.b", 1, 1);
        Self { cfg, params: p }
    }

    pub fn cast<G: Real>(&self) -> VocoderNet<G> {
        VocoderNet { cfg: self.cfg.clone(), params: self.params.cast() }
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// `mel: [T × 80]`, `speaker: [1 × d_spk]` (or `None` to drop the speaker
    /// path). Returns `[1 × T·294]` samples in (-1, 1).
    pub fn forward_graph(&self, g: &mut Graph<F>, mel: NodeId, speaker: Option<NodeId>, trainable: bool) -> NodeId {
        let slope = F::from_f64c(LEAK);
        // log-mel values sit roughly in [-12, 3]; bring them near unit scale
        let (rows, cols) = g.value(mel).shape();
        let m = g.scale(mel, F::from_f64c(0.2));
        let one = g.constant(Tensor::full(rows, cols, F::one()));
        let m = g.add(m, one);
        let x = g.transpose(m);
        let w = g.weight(&self.params, "in.w", trainable);
        let b = g.weight(&self.params, "in.b", trainable);
        let mut h = g.conv1d(x, w, 3, 1, 1);
        h = g.add_col(h, b);
        if let Some(s) = speaker {
            let ws = g.weight(&self.params, "spk.w", trainable);
            let bias = g.matmul_t(ws, s);
            h = g.add_col(h, bias);
        }
        h = g.leaky_relu(h, slope);
        for (i, &s) in UPSAMPLE.iter().enumerate() {
            let w = g.weight(&self.params, &format!("up{i}.w"), trainable);
            let b = g.weight(&self.params, &format!("up{i}.b"), trainable);
            h = g.conv_transpose1d(h, w, s, s);
            h = g.add_col(h, b);
            h = g.leaky_relu(h, slope);
            let w = g.weight(&self.params, &format!("res{i}.w"), trainable);
            let b = g.weight(&self.params, &format!("res{i}.b"), trainable);
            let r = g.conv1d(h, w, 3, 1, 1);
            let r = g.add_col(r, b);
            let r = g.leaky_relu(r, slope);
            h = g.add(h, r);
        }
        let w = g.weight(&self.params, "out.w", trainable);
        let b = g.weight(&self.params, "out.b", trainable);
        let y = g.conv1d(h, w, 3, 1, 1);
        let y = g.add_col(y, b);
        g.tanh(y)
    }

    pub fn samples(&self, mel: &Tensor<F>, speaker: Option<&Tensor<F>>) -> Tensor<F> {
        let mut g = Graph::new();
        let m = g.constant(mel.clone());
        let s = speaker.map(|s| g.constant(s.clone()));
        let y = self.forward_graph(&mut g, m, s, false);
        g.value(y).clone()
    }
}

impl VocoderNet<f32> {
    pub fn vocode(&self, mel: &MelSpectrogram, speaker_mean: Option<&Tensor<f32>>) -> Result<Waveform> {
        if mel.n_frames() == 0 {
            return Err(Error::EmptyInput("mel frames"));
        }
        if let Some(s) = speaker_mean {
            if s.shape() != (1, self.cfg.d_spk) {
                return Err(Error::Shape(format!("speaker vector is {:?}, need [1 × {}]", s.shape(), self.cfg.d_spk)));
            }
        }
        let y = self.samples(&mel.frames, speaker_mean);
        debug_assert_eq!(y.cols(), mel.n_frames() * HOP);
        Waveform::new(y.into_data(), SAMPLE_RATE)
    }
}
