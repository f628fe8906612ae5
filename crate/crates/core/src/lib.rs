//! Targetless extrinsic calibration between an infrastructure LiDAR and a
//! vehicle LiDAR from 3D detection boxes alone.
//!
//! The pipeline ([`pipeline::calibrate`]) scores every same-category box
//! pair by how well the extrinsic it implies aligns the two whole scenes
//! (overall IoU), solves a linear assignment over those scores to find the
//! common objects, then fits and refines one rigid transform to the corners
//! of the matched boxes. No initial extrinsic is needed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod error;
pub mod evaluation;
pub mod extrinsics;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod pipeline;

pub use affinity::{AffinityKind, AffinityMatrix, Scene, StrategyConfig};
pub use error::{Error, Result};
pub use evaluation::{BenchmarkReport, Difficulty, FramePairRecord};
pub use geometry::{Box3D, Category, OrientedBox, RigidTransform};
pub use matching::{MatchSet, MatchedPair};
pub use pipeline::{calibrate, CalibrationResult, CalibrationStatus};
