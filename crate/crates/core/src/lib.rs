//! Spectral community detection for directed networks under the
//! degree-corrected block model: D-SCORE, D-SCORE_q, oPCA and their
//! regularized variants, with intersection-with-attachment.

pub mod cluster;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod ratio;
pub mod seed;
pub mod spectral;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
