//! Coarse-to-fine Embedded PatchMatch for reference-based super-resolution.
//!
//! Given an upsampled low-resolution image (LR↑) and a sharp reference
//! (Ref), the crate finds for every LR↑ position the best-matching Ref
//! position at several Ref scales, then aggregates and fuses the matched
//! content. Matching cost is counted exactly and can be checked against a
//! closed-form model and an exhaustive oracle.
//!
//! ```
//! use cfe_patchmatch::{run_cfe, MatchConfig, PyramidConfig};
//! use cfe_patchmatch::synth::random_features;
//!
//! let k = random_features(4, 32, 32, 1);
//! let q = random_features(4, 40, 40, 2);
//! let out = run_cfe(&k, &q, &PyramidConfig::default(), &MatchConfig::default())?;
//! assert_eq!(out.nnf.dims(), (32, 32));
//! # Ok::<(), cfe_patchmatch::Error>(())
//! ```
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod aggregate;
pub mod error;
pub mod io;
pub mod matcher;
pub mod oracle;
pub mod pipeline;
pub mod pyramid;
pub mod synth;
pub mod tensor;

pub use aggregate::{dynamic_aggregate, fuse_multiscale, standard_aggregate, AggregationConfig, TapKernel};
pub use error::{Error, Result};
pub use matcher::{run_embedded_patchmatch, Coord, MatchConfig, Nnf, PositionMap, RelevanceMap};
pub use oracle::{brute_force_nnf, cost_model};
pub use pipeline::RunConfig;
pub use pyramid::{run_cfe, PyramidConfig};
pub use tensor::{FeatureMap, Image};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/relevance.md")]
    mod relevance {}
    #[doc = include_str!("../../../book/src/embedded_patchmatch.md")]
    mod embedded_patchmatch {}
    #[doc = include_str!("../../../book/src/coarse_to_fine.md")]
    mod coarse_to_fine {}
    #[doc = include_str!("../../../book/src/cost_model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
