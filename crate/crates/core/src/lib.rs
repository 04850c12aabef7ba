//! Anatomy-aware mass classification on organ segmentations.
//!
//! The pipeline runs from voxel label/probability volumes to a fixed
//! 156-vertex organ mesh, per-vertex zones and features, and a graph
//! residual network with vertex-level and global classification heads.

// `!(a <= b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
pub mod graphnet;
pub mod mesh;
pub mod meshfit;
pub mod pipeline;
pub mod prototype;
pub mod spatial;
pub mod synth;
pub mod template;
pub mod volume;
pub mod zones;

pub use error::{Error, Result};
pub use mesh::{AnatomyMesh, Region, RegionRanges};
pub use volume::{Grid, LabelVolume, Mask, ProbVolume, VoxelCoord};
