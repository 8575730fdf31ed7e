//! Pairwise ZCA-cor whitening of bilateral and tissue-paired brain features,
//! with classifier weights mapped back to the original features.
//!
//! The pipeline residualizes confounds, standardizes, whitens declared
//! feature pairs stage by stage, and trains an L2-regularized logistic
//! regression. Weights learned on whitened inputs are projected back so that
//! each one refers to an original feature.

pub mod artifact;
pub mod classifier;
pub mod config;
pub mod cv;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod preprocess;
pub mod results;
pub mod spectral;
pub mod synth;
pub mod table;
pub mod whitener;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/whitening.md")]
    mod whitening {}
    #[doc = include_str!("../../../book/src/manifests.md")]
    mod manifests {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/interpretation.md")]
    mod interpretation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
