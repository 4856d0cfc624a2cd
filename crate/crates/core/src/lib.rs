//! Spatial indexes for large static multidimensional point sets.
//!
//! * [`layered_grid`]: random-layer uniform grids answering "n points from
//!   this box, following the data distribution".
//! * [`kdtree`]: balanced, post-order numbered kd-tree with polytope queries.
//! * [`knn`]: exact k-nearest-neighbor search by boundary-point expansion.
//! * [`voronoi`]: sampled Voronoi tessellation with approximate Delaunay
//!   adjacency, directed-walk point location and Monte-Carlo cell volumes.
//! * [`cluster`]: basin spanning tree clustering over cell densities.
//! * [`estimate`]: kNN + local polynomial regression.

pub mod cluster;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod kdtree;
pub mod knn;
pub mod layered_grid;
pub mod rng;
pub mod voronoi;
pub mod workload;

pub use dataset::{Format, PointSet};
pub use error::{Error, Result};
pub use geometry::{BoundingBox, Classification, Halfspace, Polytope};
