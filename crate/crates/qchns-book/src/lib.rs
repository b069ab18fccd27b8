//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/elliptic.md")]
pub mod elliptic {}
#[doc = include_str!("../../../book/src/phase.md")]
pub mod phase {}
#[doc = include_str!("../../../book/src/stepping.md")]
pub mod stepping {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/operator_lab.md")]
pub mod operator_lab {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
