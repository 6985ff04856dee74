//! Shared 3D math: rigid/similarity transforms, camera projection, meshes,
//! software rasterization, ray casting, voxel grids, and point-set alignment.
//!
//! Conventions (fixed for the whole crate):
//!
//! - Right-handed camera frame, +z forward, x right, y down.
//! - Pixel origin at the top-left image corner; the center of raster pixel
//!   `(i, j)` sits at continuous coordinate `(i + 0.5, j + 0.5)`.
//! - Depths are camera-frame z in meters; `+inf` marks empty depth pixels.

mod align;
mod camera;
mod image;
mod mesh;
mod raster;
mod ray;
mod se3;
#[cfg(test)]
pub(crate) mod testutil;
mod views;
mod voxel;

pub use align::umeyama_sim3;
pub use camera::{project, unproject, CameraIntrinsics};
pub use image::{DepthMap, MaskImage};
pub use mesh::TriMesh;
pub use raster::rasterize;
pub use ray::{ray_intersect, RayHit};
pub use se3::{SE3Pose, Sim3, Trajectory};
pub use views::{fibonacci_sphere_views, look_at_pose};
pub use voxel::{voxel_surface, VoxelGrid};

/// 3D point/vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Continuous pixel coordinate (u right, v down).
pub type Pixel = nalgebra::Vector2<f64>;

/// Errors from geometric operations.
#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("triangle index {index} out of bounds for {vertices} vertices")]
    IndexOutOfBounds { index: usize, vertices: usize },
    #[error("ray direction is not unit length (|d| = {0})")]
    NonUnitDirection(f64),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("voxel grid resolution must be >= 2 per axis, got {0}x{1}x{2}")]
    BadResolution(usize, usize, usize),
    #[error("occupancy value {0} outside [0,1]")]
    BadOccupancy(f64),
    #[error("threshold must lie in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("trajectory frame indices must be strictly increasing")]
    NonIncreasingFrames,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },
}

pub(crate) fn parse_err(file: &str, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        file: file.to_string(),
        msg: msg.into(),
    }
}
