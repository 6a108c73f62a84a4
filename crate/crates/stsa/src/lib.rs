//! Spatial-temporal subspace attention for latent video grids.
//!
//! The crate decomposes a `[F, H, W, C]` latent video into small
//! spatial-temporal subspaces, warps content along motion flow so that
//! corresponding pixels share a subspace, and runs attention independently
//! inside each one. This keeps attention cost linear in the number of
//! subspaces instead of quadratic in the full token count, while the
//! half-window shift and flow-guided alignment preserve cross-window and
//! cross-frame consistency.

pub mod align;
pub mod attention;
pub mod cli;
pub mod error;
pub mod flow;
pub mod harness;
pub mod rng;
pub mod scalar;
pub mod subspace;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

// Compile and run every code snippet in the guide as a doc-test, one module
// per chapter so a failure names the chapter it came from.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/subspaces.md")]
    mod subspaces {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/block.md")]
    mod block {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
