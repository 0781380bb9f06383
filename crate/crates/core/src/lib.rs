//! Compress dense multi-grid volumes into a Fourier-feature coordinate network,
//! trained on selectively sampled voxels.
//!
//! The pipeline is:
//!
//! 1. [`volume::normalize`] every grid to `[0, 1]`;
//! 2. build a sampling mask: the whole bounding box, the active-voxel mask
//!    ([`mask::compute_avm`]) or a dilation of it ([`mask::dilate`]);
//! 3. flatten the masked voxels into a [`dataset::CoordinateDataset`];
//! 4. [`train::train`] an [`net::FfNetwork`] on it;
//! 5. [`train::reconstruct_full`] over the full bounding box and score it with
//!    [`metrics::evaluate`].
//!
//! [`pipeline`] wires these steps together for the command line and the
//! mask-variant sweep.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
