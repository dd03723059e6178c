use codec_tts::Error;
use std::fmt;

/// A failed command and its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(Error),
    Model(Error),
    /// A check that ran to completion and did not pass.
    Failed(String),
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const MODEL: u8 = 3;

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Data(_) => Self::DATA,
            Failure::Model(_) | Failure::Failed(_) => Self::MODEL,
        }
    }

    /// Errors raised while loading or running trained models.
    pub fn model(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            e => Failure::Model(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            Error::Checkpoint(_) | Error::Diverged { .. } | Error::NoAudio | Error::Shape(_) => Failure::Model(e),
            e => Failure::Data(e),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => write!(f, "{m}"),
            Failure::Data(e) | Failure::Model(e) => write!(f, "{e}"),
        }
    }
}
