//! Unsupervised anomaly detection and 3D localization for segmented lung CT
//! volumes, built on multi-view 2D projections and nearest-neighbour patch
//! memory banks.
//!
//! The guide in `book/` walks through the pipeline; its code listings are
//! compiled and run as doctests of this crate.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod grid;
pub mod kdtree;
pub mod labeling;
pub mod manifest;
pub mod memory_bank;
pub mod mvol;
pub mod percentile;
pub mod phantom;
pub mod pipeline;
pub mod projection;
pub mod reconstruction;
pub mod report;
pub mod segmentation;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/projections.md")]
    mod projections {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/memory-banks.md")]
    mod memory_banks {}
    #[doc = include_str!("../../../book/src/localization.md")]
    mod localization {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
