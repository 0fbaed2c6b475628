//! The guide in `book/` is plain mdbook, which cannot link against workspace
//! crates when testing. Each chapter is included here as module docs instead,
//! so `cargo test --doc` compiles and runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/mining.md")]
pub mod mining {}
#[doc = include_str!("../../../book/src/contrastive.md")]
pub mod contrastive {}
#[doc = include_str!("../../../book/src/obsmodel.md")]
pub mod obsmodel {}
#[doc = include_str!("../../../book/src/filter.md")]
pub mod filter {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
