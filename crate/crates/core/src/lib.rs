//! Self-supervised pretraining for outdoor LiDAR point clouds from paired
//! vehicle / roadside-infrastructure captures.
//!
//! The pipeline fuses the infrastructure sweep into the vehicle frame, voxelizes
//! both the vehicle-only and the fused cloud, encodes voxels, and trains the
//! encoder with two objectives:
//!
//! * a cooperative InfoNCE loss between corresponding vehicle / fusion voxels
//!   ([`losses::co2_loss`]);
//! * a contextual shape prediction loss, a KL divergence between a predicted
//!   local distribution and a shape-context histogram computed from geometry
//!   ([`losses::csp_loss`], [`shape_context`]).
//!
//! Everything is double precision with hand-written backward passes so the
//! whole objective can be checked against finite differences.

pub mod error;
pub mod geom;
pub mod io;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod shape_context;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};
pub use geom::{PointCloud, RigidTransform};
