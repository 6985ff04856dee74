//! Pinhole camera model and projection.

use super::{GeometryError, Pixel, SE3Pose, Vec3};

/// Minimum camera-frame depth for a valid projection.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::BadIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::BadIntrinsics(format!(
                "principal point ({cx},{cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn centered(f: f64, width: usize, height: usize) -> Self {
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
            .expect("centered intrinsics are valid by construction")
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }
}

/// Projects a world/object point through `pose` into the image.
///
/// Returns the continuous pixel coordinate and the camera-frame depth.
/// Points at or behind the camera plane (z <= [`MIN_DEPTH`]) are rejected.
pub fn project(
    intr: &CameraIntrinsics,
    pose: &SE3Pose,
    p: &Vec3,
) -> Result<(Pixel, f64), GeometryError> {
    let pc = pose.transform_point(p);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { z: pc.z });
    }
    let u = intr.fx * pc.x / pc.z + intr.cx;
    let v = intr.fy * pc.y / pc.z + intr.cy;
    Ok((Pixel::new(u, v), pc.z))
}

/// Lifts a pixel at a given camera depth back into the world/object frame.
pub fn unproject(
    intr: &CameraIntrinsics,
    pose: &SE3Pose,
    pixel: &Pixel,
    depth: f64,
) -> Result<Vec3, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let pc = Vec3::new(
        (pixel.x - intr.cx) / intr.fx * depth,
        (pixel.y - intr.cy) / intr.fy * depth,
        depth,
    );
    Ok(pose.inverse().transform_point(&pc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};

    fn tiny_intr(f: f64) -> CameraIntrinsics {
        // Principal point at 0 is allowed: 0 <= c < width.
        CameraIntrinsics::new(f, f, 0.0, 0.0, 8, 8).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let intr = tiny_intr(1.0);
        let (px, depth) = project(&intr, &SE3Pose::identity(), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Pixel::new(0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(depth, 1.0);
    }

    #[test]
    fn similar_triangles() {
        let intr = tiny_intr(2.0);
        let (px, depth) = project(&intr, &SE3Pose::identity(), &Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(px, Pixel::new(1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(depth, 2.0);
    }

    #[test]
    fn behind_camera_rejected() {
        let intr = tiny_intr(1.0);
        assert!(project(&intr, &SE3Pose::identity(), &Vec3::new(0.0, 0.0, -1.0)).is_err());
        assert!(unproject(&intr, &SE3Pose::identity(), &Pixel::new(0.0, 0.0), -0.5).is_err());
    }

    #[test]
    fn matches_scalar_pinhole_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let intr = CameraIntrinsics::new(123.0, 140.0, 32.5, 30.0, 64, 64).unwrap();
        for _ in 0..200 {
            let pose = SE3Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
                Vec3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(1.0..3.0),
                ),
            );
            let p = Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            // Independent scalar route: rotation matrix entries by hand.
            let r = pose.rotation.to_rotation_matrix();
            let m = r.matrix();
            let x = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + pose.translation.x;
            let y = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + pose.translation.y;
            let z = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + pose.translation.z;
            if z <= MIN_DEPTH {
                continue;
            }
            let expect = Pixel::new(intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy);
            let (px, depth) = project(&intr, &pose, &p).unwrap();
            assert_relative_eq!(px, expect, epsilon = 1e-10);
            assert_relative_eq!(depth, z, epsilon = 1e-12);
        }
    }

    #[test]
    fn unproject_inverts_project() {
        // Fixed cases from the projection examples.
        let intr = tiny_intr(1.0);
        let p = unproject(&intr, &SE3Pose::identity(), &Pixel::new(0.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(p, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

        let intr2 = tiny_intr(2.0);
        let p2 = unproject(&intr2, &SE3Pose::identity(), &Pixel::new(1.0, 0.0), 2.0).unwrap();
        assert_relative_eq!(p2, Vec3::new(1.0, 0.0, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn roundtrip_error_below_1e6_px() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let intr = CameraIntrinsics::centered(80.0, 64, 64);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let pose = SE3Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.8..2.0),
                ),
            );
            let p = Vec3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            let Ok((px, depth)) = project(&intr, &pose, &p) else {
                continue;
            };
            let back = unproject(&intr, &pose, &px, depth).unwrap();
            let (px2, _) = project(&intr, &pose, &back).unwrap();
            max_err = max_err.max((px2 - px).norm());
        }
        assert!(max_err < 1e-6, "max roundtrip pixel error {max_err}");
    }
}
