//! Runs the code listings of the guide in `book/` as doc-tests. mdbook cannot
//! link external crates when testing, so each chapter is pulled in here.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/audio.md")]
pub mod audio {}

#[doc = include_str!("../../../book/src/text.md")]
pub mod text {}

#[doc = include_str!("../../../book/src/codec.md")]
pub mod codec {}

#[doc = include_str!("../../../book/src/speaker.md")]
pub mod speaker {}

#[doc = include_str!("../../../book/src/lm.md")]
pub mod lm {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/vocoder.md")]
pub mod vocoder {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
