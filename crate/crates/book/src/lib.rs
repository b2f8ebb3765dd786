//! The guide's chapters, one module each, so `cargo test --doc` runs every
//! Rust listing against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/system_model.md")]
pub mod system_model {}
#[doc = include_str!("../../../book/src/majorization.md")]
pub mod majorization {}
#[doc = include_str!("../../../book/src/design.md")]
pub mod design {}
#[doc = include_str!("../../../book/src/waterfill.md")]
pub mod waterfill {}
#[doc = include_str!("../../../book/src/thp.md")]
pub mod thp {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
