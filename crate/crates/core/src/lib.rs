//! Trustworthy segmentation numerics.
//!
//! Dempster-Shafer fusion of a backbone probability map with an atlas-based
//! fallback under anatomical and intensity contracts, plus the supporting
//! pieces: label-set losses for partial supervision, hardness-weighted DRO
//! sampling, weighted generalized Procrustes, heat-kernel atlas fusion and
//! margin tuning from segmentation metrics.
//!
//! Runnable walkthroughs live in `examples/`; the `veritas` binary exposes
//! the file-based workflows.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod cli;
pub mod condition;
pub mod contracts;
pub mod dempster;
pub mod dro;
pub mod edt;
pub mod error;
pub mod fallback;
mod filter;
pub mod fusion;
pub mod io;
pub mod labelset;
pub mod metrics;
pub mod volume;

pub use condition::Condition;
pub use error::{Error, Result};
pub use volume::{
    argmax_labels, GridMeta, LabelSetVolume, LabelSpace, MaskVolume, ProbabilityVolume,
    ScalarVolume, SubsetMask, VectorVolume,
};
