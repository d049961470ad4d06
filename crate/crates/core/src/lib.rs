//! Planar orientation measurement from point clouds.
//!
//! Stages: outlier filtering, voxel plane fitting, region growing,
//! minimum-perimeter region planes, and strike/dip extraction, with
//! scoring against ground truth and a synthetic scene generator.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud_io;
pub mod error;
pub mod geometry;
pub mod noise_filter;
pub mod orientation;
pub mod par;
pub mod pipeline;
pub mod quality;
pub mod region_plane;
pub mod segmentation;
pub mod synth;
pub mod voxel_fit;

pub use error::{Error, Result, Stage};
pub use pipeline::{run_on_cloud, run_pipeline, run_sweep, RunConfig, RunReport, SweepFactor};
