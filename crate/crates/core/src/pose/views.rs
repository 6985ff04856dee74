//! Reference view rendering on a sphere around the mesh.

use crate::geometry::{
    fibonacci_sphere_views, rasterize, CameraIntrinsics, DepthMap, MaskImage, SE3Pose, TriMesh,
};

use super::PoseError;

/// One rendered view of the reconstructed mesh.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub pose: SE3Pose,
    pub depth: DepthMap,
    pub mask: MaskImage,
}

/// Renders `n` reference views from cameras uniformly spread on a sphere.
///
/// The view radius is set from the mesh bounding sphere so the object fills
/// about 60% of the image height.
pub fn reference_views(
    mesh: &TriMesh,
    n: usize,
    intr: &CameraIntrinsics,
) -> Result<Vec<RenderedView>, PoseError> {
    let (center, radius) = mesh.bounding_sphere().ok_or(PoseError::EmptyMesh)?;
    let distance = view_distance(radius, intr);
    let poses = fibonacci_sphere_views(n, distance, &center, intr);
    Ok(poses
        .into_iter()
        .map(|pose| {
            let (depth, mask) = rasterize(mesh, intr, &pose);
            RenderedView { pose, depth, mask }
        })
        .collect())
}

/// Camera distance at which a bounding sphere of `radius` subtends ~60% of
/// the image height (tangent rays at half-angle asin(radius/distance)).
pub(crate) fn view_distance(radius: f64, intr: &CameraIntrinsics) -> f64 {
    let half_height_px = 0.3 * intr.height as f64;
    let lateral = radius * intr.fy / half_height_px;
    (lateral * lateral + radius * radius).sqrt()
}

/// Renders the mesh at one pose (used by the per-round refinement).
pub fn render_at(mesh: &TriMesh, intr: &CameraIntrinsics, pose: &SE3Pose) -> RenderedView {
    let (depth, mask) = rasterize(mesh, intr, pose);
    RenderedView {
        pose: *pose,
        depth,
        mask,
    }
}
