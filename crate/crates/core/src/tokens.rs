//! Audio token ids shared by the codec and the language model.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Number of audio token ids (`0..1024`).
pub const AUDIO_VOCAB: u32 = 1024;
pub const SOS: u32 = 1024;
pub const EOS: u32 = 1025;
pub const PAD: u32 = 1026;
/// Audio ids plus SOS, EOS and PAD.
pub const LM_VOCAB: usize = 1027;

pub fn is_audio(id: u32) -> bool {
    id < AUDIO_VOCAB
}

/// A sequence of token ids in `0..=1026`. At most one EOS, followed only by PAD.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        let mut seen_eos = false;
        for &t in &tokens {
            if t as usize >= LM_VOCAB {
                return Err(Error::InvalidToken { id: t as usize, vocab: LM_VOCAB });
            }
            if seen_eos && t != PAD {
                return Err(Error::InvalidArgument("only PAD may follow EOS".into()));
            }
            if t == EOS {
                seen_eos = true;
            }
        }
        Ok(Self { tokens })
    }

    /// Audio-only sequence; any special id is an error.
    pub fn audio(tokens: Vec<u32>) -> Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| !is_audio(t)) {
            return Err(Error::SpecialToken(t as usize));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_audio_only(&self) -> bool {
        self.tokens.iter().all(|&t| is_audio(t))
    }

    /// Audio tokens only (specials removed).
    pub fn strip_specials(&self) -> Self {
        Self { tokens: self.tokens.iter().copied().filter(|&t| is_audio(t)).collect() }
    }

    /// Teacher-forcing pair for an audio-only sequence: input is `SOS, a0..a(n-1)`
    /// and target is `a0..a(n-1), EOS`.
    pub fn shifted_pair(&self) -> (Vec<u32>, Vec<u32>) {
        let mut input = Vec::with_capacity(self.len() + 1);
        input.push(SOS);
        input.extend_from_slice(&self.tokens);
        let mut target = self.tokens.clone();
        target.push(EOS);
        (input, target)
    }

    /// One id per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            tokens.push(line.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("not a token id: {line:?}") })?);
        }
        Self::new(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(TokenSequence::new(vec![1, 2, EOS, PAD, PAD]).is_ok());
        assert!(TokenSequence::new(vec![1, EOS, 2]).is_err());
        assert!(TokenSequence::new(vec![1, EOS, EOS]).is_err());
        assert!(TokenSequence::new(vec![1027]).is_err());
        assert!(matches!(TokenSequence::audio(vec![3, SOS]), Err(Error::SpecialToken(1024))));
    }

    #[test]
    fn shift_and_text() {
        let s = TokenSequence::audio(vec![7, 8, 9]).unwrap();
        assert_eq!(s.shifted_pair(), (vec![SOS, 7, 8, 9], vec![7, 8, 9, EOS]));
        assert_eq!(TokenSequence::from_text(&s.to_text()).unwrap(), s);
        assert!(TokenSequence::from_text("1\nx\n").is_err());
    }
}
