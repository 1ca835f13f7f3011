//! Reconstruction of curvilinear structures (neurons, vessels, roads) in 2D and
//! 3D grids.
//!
//! A structure is modelled as a chain of cylinders around a sampled centerline.
//! Tracing repeatedly steps along a predicted direction by a predicted radius,
//! snaps the candidate point onto the nearest confident centerline voxel and
//! stops once the boundary probability drops or the path runs into an already
//! traced region. The per-point predictions come from a [`provider`], which can
//! read ground truth, run classical image filters, or serve grids exported by an
//! external model.
//!
//! Heavy per-voxel kernels go through [`exec::Exec`], which dispatches to rayon
//! when the `parallel` feature is enabled and to plain loops otherwise. Both
//! paths produce identical results.

pub mod codec;
pub mod config;
pub mod error;
pub mod exec;
pub mod filters;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod raster;
pub mod synth;
pub mod tracer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{Branch, BranchForest, CenterNode, NodeRef, Point, UnitVector};
pub use grid::Grid;
