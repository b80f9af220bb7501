//! mdbook cannot run listings that depend on workspace crates, so every
//! chapter is pulled in here as module docs and `cargo test --doc` runs
//! them. One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/agreement.md")]
pub mod agreement {}
#[doc = include_str!("src/lattice.md")]
pub mod lattice {}
#[doc = include_str!("src/ordering.md")]
pub mod ordering {}
#[doc = include_str!("src/timestamps.md")]
pub mod timestamps {}
#[doc = include_str!("src/chains.md")]
pub mod chains {}
#[doc = include_str!("src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("src/sizing.md")]
pub mod sizing {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
