// NaN-rejecting `!(x > 0.0)` checks are deliberate throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod layout;
pub mod pipeline;
pub mod preprocess;
pub mod segment;
pub mod spatial;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use geom::{Aabb, Point3, PointCloud, VoxelKey};
pub use spatial::SpatialIndex;

/// Library version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
