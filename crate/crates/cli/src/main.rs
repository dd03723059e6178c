mod commands;
mod failure;

use clap::{Args, Parser, Subcommand, ValueEnum};
use failure::Failure;
use std::path::PathBuf;
use std::process::ExitCode;

/// Neural-codec text-to-speech: training, synthesis and evaluation.
#[derive(Parser, Debug)]
#[command(name = "codec-tts", version)]
pub struct Cli {
    /// Plain-text `key=value` settings, grouped by prefix (`lm.`, `train.`, `codec.`, `vocoder.`, `bpe.`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; defaults to 0 with --deterministic, otherwise to the clock.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Reproducible run: fixed seed and no clock-derived state.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a small synthetic multi-speaker corpus with a manifest.
    ToyCorpus(ToyCorpusArgs),
    /// Train the audio codec and write `codec.bin` into the model directory.
    TrainCodec(TrainArgs),
    /// Train BPE and the codec language model (needs `codec.bin`).
    TrainLm(TrainLmArgs),
    /// Train the vocoder against a discriminator, or install the deterministic one.
    TrainVocoder(TrainVocoderArgs),
    /// Text plus a reference voice to a WAV file.
    Synthesize(SynthesizeArgs),
    /// WAV to a 4-codebook code matrix.
    Encode(EncodeArgs),
    /// Code matrix (first codebook) to WAV.
    Decode(DecodeArgs),
    /// Descriptive statistics of a manifest.
    CorpusStats(CorpusStatsArgs),
    /// Real-time factor of end-to-end synthesis.
    BenchRtf(BenchArgs),
    /// Teacher-forced NLL per text-length bucket, against an untrained baseline.
    LengthProbe(ProbeArgs),
    /// Finite-difference gradient checks of every trainable component.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct ToyCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    #[arg(long, default_value_t = 4)]
    pub per_speaker: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest; audio paths are relative to its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model directory.
    #[arg(long)]
    pub models: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Optimizer updates to run.
    #[arg(long, default_value_t = 100)]
    pub updates: usize,
    /// Per-step loss log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VocoderMode {
    Neural,
    Deterministic,
}

#[derive(Args, Debug)]
pub struct TrainVocoderArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum, default_value_t = VocoderMode::Neural)]
    pub mode: VocoderMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingMode {
    Greedy,
    Topk,
}

#[derive(Args, Debug)]
pub struct SamplingArgs {
    #[arg(long, value_enum, default_value_t = SamplingMode::Topk)]
    pub sampling: SamplingMode,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub temperature: f64,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Reference recording of the target voice (at least 0.5 s).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output code file, one frame per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub codes: PathBuf,
    /// Voice reference for the vocoder.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorpusStatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Text to synthesize; repeatable.
    #[arg(long)]
    pub text: Vec<String>,
    /// File with one text per line.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Texts with ground-truth audio.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Failure::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
