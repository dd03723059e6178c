use crate::audio::{load_wav, mel_spectrogram, resample, Waveform, SAMPLE_RATE};
use crate::checkpoint::KeyValues;
use crate::codec::{select_first_codebook, NeuralCodec};
use crate::error::{Error, Result};
use crate::lm::CodecLm;
use crate::speaker::SpeakerEncoder;
use crate::text::{BpeModel, TextEncoder, TextEncoding};
use crate::training::{FrozenModules, TrainingExample};
use crate::vocoder::Vocoder;
use std::path::Path;

pub const BPE_FILE: &str = "bpe.txt";
pub const CODEC_FILE: &str = "codec.bin";
pub const LM_FILE: &str = "lm.bin";
pub const VOCODER_FILE: &str = "vocoder.bin";
pub const SET_FILE: &str = "models.cfg";
pub const FORMAT_VERSION: u32 = 1;

/// Reads a WAV file and brings it to the model sample rate.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let w = load_wav(path)?;
    Ok(if w.sample_rate() == SAMPLE_RATE { w } else { resample(&w, SAMPLE_RATE) })
}

/// Everything upstream of the language model. None of it is trained with the LM.
#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub bpe: BpeModel,
    pub text: TextEncoder,
    pub codec: NeuralCodec,
    pub speaker: SpeakerEncoder,
}

impl FrontEnd {
    /// The text encoder is built from its fixed seed with width `hidden_dim`.
    pub fn new(bpe: BpeModel, codec: NeuralCodec, hidden_dim: usize) -> Self {
        let text = TextEncoder::new(bpe.vocab_size(), hidden_dim);
        Self { bpe, text, codec, speaker: SpeakerEncoder::new() }
    }

    pub fn frozen(&self) -> FrozenModules<'_> {
        FrozenModules { text: &self.text, codec: &self.codec, speaker: &self.speaker }
    }

    pub fn encode_text(&self, text: &str) -> Result<TextEncoding> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("text"));
        }
        let ids = self.bpe.encode(text)?;
        self.text.encode(&ids)
    }

    /// Teacher-forcing example for one utterance; the utterance is also the
    /// speaker reference.
    pub fn prepare(&self, transcript: &str, wave: &Waveform, max_seq: usize) -> Result<TrainingExample> {
        let text = self.encode_text(transcript)?;
        let speaker = self.speaker.embed(wave)?;
        let tokens = select_first_codebook(&self.codec.encode_audio(wave)?);
        let mel = mel_spectrogram(wave);
        TrainingExample::new(tokens, text, speaker, &mel, wave, max_seq)
    }
}

/// A complete, mutually consistent set of models, stored in one directory.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub front: FrontEnd,
    pub lm: CodecLm,
    pub vocoder: Vocoder,
}

impl ModelSet {
    pub fn new(front: FrontEnd, lm: CodecLm, vocoder: Vocoder) -> Result<Self> {
        if front.text.d_model() != lm.cfg.hidden_dim {
            return Err(Error::Checkpoint(format!("text width {} does not match LM width {}", front.text.d_model(), lm.cfg.hidden_dim)));
        }
        Ok(Self { front, lm, vocoder })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.front.bpe.save(dir.join(BPE_FILE))?;
        self.front.codec.save(dir.join(CODEC_FILE))?;
        self.lm.save(dir.join(LM_FILE))?;
        self.vocoder.save(dir.join(VOCODER_FILE))?;
        set_record(&self.front, &self.lm).save(dir.join(SET_FILE))
    }

    /// Loads and checks that the files were saved together.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bpe = BpeModel::load(dir.join(BPE_FILE))?;
        let codec = NeuralCodec::load(dir.join(CODEC_FILE))?;
        let lm = CodecLm::load(dir.join(LM_FILE))?;
        let vocoder = Vocoder::load(dir.join(VOCODER_FILE))?;
        let front = FrontEnd::new(bpe, codec, lm.cfg.hidden_dim);
        let stored = KeyValues::load(dir.join(SET_FILE))?;
        let expect = set_record(&front, &lm);
        for key in expect.keys() {
            if stored.get_str(key) != expect.get_str(key) {
                return Err(Error::Checkpoint(format!("model set mismatch on {key}: stored {:?}, found {:?}", stored.get_str(key), expect.get_str(key))));
            }
        }
        Self::new(front, lm, vocoder)
    }
}

/// Record tying the files of a set together: the LM's tokens only make sense
/// with the codec (and BPE) it was trained on.
fn set_record(front: &FrontEnd, lm: &CodecLm) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("format_version", FORMAT_VERSION);
    kv.set("bpe_vocab", front.bpe.vocab_size());
    kv.set("codec_checksum", front.codec.checksum());
    kv.set("lm_hidden_dim", lm.cfg.hidden_dim);
    kv
}
