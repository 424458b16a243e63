//! The guide in `book/` is plain mdbook, which cannot run listings that
//! depend on workspace crates. Each chapter is pulled in here as the docs of
//! an empty module, so `cargo test -p tubechaos-book` runs every listing as a
//! doc-test against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/integrable.md")]
pub mod integrable {}
#[doc = include_str!("../../../book/src/perturbation.md")]
pub mod perturbation {}
#[doc = include_str!("../../../book/src/realization.md")]
pub mod realization {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
