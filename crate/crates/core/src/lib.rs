//! Multi-view PBR texture baking.
//!
//! Per-view images are back-projected onto a mesh's UV atlas, weighted by
//! per-texel uncertainty and a view score, and blended into albedo and
//! metallic/roughness maps. Additional views are chosen greedily by
//! footprint uncertainty or coverage.

pub mod bake;
pub mod camera;
pub mod cli;
pub mod error;
pub mod errsim;
pub mod fixtures;
pub mod geometry;
pub mod image;
pub mod io;
pub mod kernels;
pub mod pbrtex;
pub mod raster;
pub mod uncertainty;
pub mod viewsel;

pub use bake::{iterative_bake, BakeConfig, BakeResult, ViewContribution};
pub use camera::{canonical_candidates, make_view, View, ViewScore};
pub use error::{Error, Result};
pub use geometry::TriMesh;
pub use image::Image;
pub use pbrtex::TextureSet;
