//! Robust distributed estimation of principal eigenspaces.
//!
//! Data spread over `m` machines are summarized locally by the top-`K`
//! eigenvectors of a spatial Kendall's tau matrix, which needs no moment
//! assumptions, and the coordinator combines the local subspaces through
//! their Grassmann barycenter. The crate also provides elliptical samplers,
//! the distributed elliptical factor-model pipeline, and the simulation
//! harness used to benchmark it.
//!
//! See the guide under `book/` for a narrative walk-through.

pub mod distributed;
pub mod elliptical;
pub mod error;
pub mod experiments;
pub mod factor;
pub mod grassmann;
pub mod io;
pub mod kendall;
pub mod matrix;
pub mod rng;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/elliptical.md")]
    mod elliptical {}
    #[doc = include_str!("../../../book/src/kendall.md")]
    mod kendall {}
    #[doc = include_str!("../../../book/src/grassmann.md")]
    mod grassmann {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/factor.md")]
    mod factor {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
