//! The guide's chapters, included so `cargo test` runs their code samples.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}

#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}

#[doc = include_str!("../../../book/src/alignment.md")]
pub mod alignment {}

#[doc = include_str!("../../../book/src/pretraining.md")]
pub mod pretraining {}

#[doc = include_str!("../../../book/src/frontend.md")]
pub mod frontend {}

#[doc = include_str!("../../../book/src/multitask.md")]
pub mod multitask {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
