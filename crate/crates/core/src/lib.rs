//! Monocular curb detection, localization and tracking from forward-view
//! frames of a camera whose optical axis is parallel to the road.

pub mod appearance;
pub mod config;
pub mod edges;
pub mod eval;
pub mod geometry;
pub mod ipcm;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod template;
pub mod tracker;

/// Version of the detection pipeline.
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
