//! Losses, schedule, optimizer, training loop and gradient checking.

pub mod discriminator;
mod gradcheck;
mod losses;
pub mod optim;
mod suite;
mod trainer;

pub use discriminator::Discriminator;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use losses::{discriminator_loss, loss_ce, loss_gan_generator, loss_mel, loss_total, lr_at, LossBreakdown, PROB_CLAMP};
pub use suite::gradient_suite;
pub use trainer::{lm_loss_graph, ExampleTensors, FrozenModules, LmLossNodes, LossLog, Trainer, TrainingExample};

use crate::checkpoint::KeyValues;
use crate::error::{Error, Result};
use optim::AdamWConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub grad_accum: usize,
    pub batch: usize,
    pub max_seq: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Include the mel term (and its soft-decode path) in the LM objective.
    pub use_mel: bool,
    /// Run the vocoder/discriminator update and report `l_gan`.
    pub use_gan: bool,
    /// Learning rate of the vocoder and discriminator.
    pub gan_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.2,
            beta: 0.7,
            gamma: 0.6,
            peak_lr: 5e-4,
            warmup_steps: 32_000,
            total_steps: 800_000,
            grad_accum: 24,
            batch: 4,
            max_seq: 500,
            adamw: AdamWConfig::default(),
            seed: 0,
            use_mel: true,
            use_gan: true,
            gan_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::InvalidArgument(format!("warmup_steps {} must be below total_steps {}", self.warmup_steps, self.total_steps)));
        }
        if self.max_seq == 0 || self.max_seq > crate::lm::MAX_AUDIO_TOKENS {
            return Err(Error::InvalidArgument(format!("max_seq {} outside 1..={}", self.max_seq, crate::lm::MAX_AUDIO_TOKENS)));
        }
        if self.grad_accum == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("grad_accum and batch must be positive".into()));
        }
        Ok(())
    }

    /// Overrides defaults with any keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.get(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        take!(alpha, beta, gamma, peak_lr, warmup_steps, total_steps, grad_accum, batch, max_seq, seed, use_mel, use_gan, gan_lr);
        if let Some(v) = kv.get("beta1")? {
            c.adamw.beta1 = v;
        }
        if let Some(v) = kv.get("beta2")? {
            c.adamw.beta2 = v;
        }
        if let Some(v) = kv.get("weight_decay")? {
            c.adamw.weight_decay = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("alpha", self.alpha);
        kv.set("beta", self.beta);
        kv.set("gamma", self.gamma);
        kv.set("peak_lr", self.peak_lr);
        kv.set("warmup_steps", self.warmup_steps);
        kv.set("total_steps", self.total_steps);
        kv.set("grad_accum", self.grad_accum);
        kv.set("batch", self.batch);
        kv.set("max_seq", self.max_seq);
        kv.set("beta1", self.adamw.beta1);
        kv.set("beta2", self.adamw.beta2);
        kv.set("weight_decay", self.adamw.weight_decay);
        kv.set("seed", self.seed);
        kv.set("use_mel", self.use_mel);
        kv.set("use_gan", self.use_gan);
        kv.set("gan_lr", self.gan_lr);
        kv
    }
}
