//! Compiles the guide under `book/src` so `cargo test --doc` runs every
//! listing. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/runlength.md")]
pub mod runlength {}
#[doc = include_str!("../../../book/src/fisher.md")]
pub mod fisher {}
#[doc = include_str!("../../../book/src/classifiers.md")]
pub mod classifiers {}
#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}
#[doc = include_str!("../../../book/src/patents.md")]
pub mod patents {}
#[doc = include_str!("../../../book/src/storage.md")]
pub mod storage {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
