//! Software z-buffer rasterizer producing depth maps and coverage masks.

use super::camera::MIN_DEPTH;
use super::{CameraIntrinsics, DepthMap, MaskImage, SE3Pose, TriMesh, Vec3};

/// Rasterizes a mesh into a depth map and coverage mask.
///
/// Only pixel centers `(i + 0.5, j + 0.5)` are sampled, with no
/// anti-aliasing. Backface culling is disabled. Depth along each pixel ray
/// is the perspective-correct ray/triangle-plane intersection depth
/// (interpolated as 1/z in screen space). Equal-depth ties resolve to the
/// lower triangle index, so the result is independent of traversal order.
///
/// Triangles crossing the near plane are clipped against it; a mesh fully
/// behind the camera yields an empty depth map and a zero mask.
pub fn rasterize(mesh: &TriMesh, intr: &CameraIntrinsics, pose: &SE3Pose) -> (DepthMap, MaskImage) {
    let mut depth = DepthMap::empty(intr.width, intr.height);
    let mut mask = MaskImage::zeros(intr.width, intr.height);
    // Winning triangle index per pixel, for deterministic tie-breaks.
    let mut owner = vec![usize::MAX; intr.width * intr.height];

    let cam_verts: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| pose.transform_point(v))
        .collect();

    for (tri_idx, tri) in mesh.triangles().iter().enumerate() {
        let corners = [cam_verts[tri[0]], cam_verts[tri[1]], cam_verts[tri[2]]];
        for clipped in clip_near(&corners, MIN_DEPTH) {
            raster_triangle(&clipped, tri_idx, intr, &mut depth, &mut mask, &mut owner);
        }
    }
    (depth, mask)
}

/// Rasterizes one camera-frame triangle (all vertices in front of the near
/// plane) into the buffers.
fn raster_triangle(
    corners: &[Vec3; 3],
    tri_idx: usize,
    intr: &CameraIntrinsics,
    depth: &mut DepthMap,
    mask: &mut MaskImage,
    owner: &mut [usize],
) {
    // Project to continuous pixel coordinates; keep 1/z for interpolation.
    let mut pts = [(0.0f64, 0.0f64); 3];
    let mut inv_z = [0.0f64; 3];
    for (i, c) in corners.iter().enumerate() {
        pts[i] = (
            intr.fx * c.x / c.z + intr.cx,
            intr.fy * c.y / c.z + intr.cy,
        );
        inv_z[i] = 1.0 / c.z;
    }

    let signed_area = edge(pts[0], pts[1], pts[2]);
    if signed_area.abs() < 1e-30 {
        return; // degenerate in screen space
    }

    let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

    let x0 = (min_x - 0.5).floor().max(0.0) as usize;
    let x1 = ((max_x - 0.5).ceil() as isize).min(intr.width as isize - 1);
    let y0 = (min_y - 0.5).floor().max(0.0) as usize;
    let y1 = ((max_y - 0.5).ceil() as isize).min(intr.height as isize - 1);
    if x1 < x0 as isize || y1 < y0 as isize {
        return;
    }

    for py in y0..=y1 as usize {
        for px in x0..=x1 as usize {
            let sample = (px as f64 + 0.5, py as f64 + 0.5);
            // Barycentric coordinates relative to the signed area; accepting
            // w_i of uniform sign covers both winding orders (no culling).
            let w0 = edge(pts[1], pts[2], sample) / signed_area;
            let w1 = edge(pts[2], pts[0], sample) / signed_area;
            let w2 = edge(pts[0], pts[1], sample) / signed_area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
            let idx = py * intr.width + px;
            let cur = depth.get(px, py);
            if z < cur || (z == cur && tri_idx < owner[idx]) {
                depth.set(px, py, z);
                mask.set(px, py, true);
                owner[idx] = tri_idx;
            }
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Clips a camera-frame triangle against the plane z = near.
/// Returns 0, 1, or 2 triangles, all strictly in front of the plane.
fn clip_near(corners: &[Vec3; 3], near: f64) -> Vec<[Vec3; 3]> {
    let inside: Vec<bool> = corners.iter().map(|c| c.z > near).collect();
    let n_in = inside.iter().filter(|&&b| b).count();
    match n_in {
        0 => Vec::new(),
        3 => vec![*corners],
        _ => {
            // Sutherland-Hodgman against a single plane.
            let mut poly: Vec<Vec3> = Vec::with_capacity(4);
            for i in 0..3 {
                let j = (i + 1) % 3;
                let (a, b) = (corners[i], corners[j]);
                if inside[i] {
                    poly.push(a);
                }
                if inside[i] != inside[j] {
                    let t = (near - a.z) / (b.z - a.z);
                    poly.push(a + (b - a) * t);
                }
            }
            match poly.len() {
                3 => vec![[poly[0], poly[1], poly[2]]],
                4 => vec![[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]],
                _ => Vec::new(),
            }
        }
    }
}
