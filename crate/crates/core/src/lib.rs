//! Line mapping with learnable planar primitives.
//!
//! Rectangular planes are optimized against depth/normal supervision while
//! their edges are pulled onto detected 2D line segments; the aligned edges
//! are then extracted, tracked across views, merged and evaluated.

pub mod assign;
pub mod cli;
pub mod error;
pub mod finalize;
pub mod geometry;
pub mod io;
pub mod jet;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    Camera, CameraView, EdgeIndex, Intrinsics, LineRef, LineSegment2D, LineSegment3D, PlanarPrimitive, PlaneId,
    Ray, Vec2, Vec3,
};
