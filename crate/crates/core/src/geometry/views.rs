//! Deterministic camera placement on a view sphere.

use super::{CameraIntrinsics, SE3Pose, Vec3};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

/// Places `n` cameras on a sphere of `radius` around `look_at`, each looking
/// at the center. Points follow the Fibonacci (golden-angle) spiral, which
/// spreads them near-uniformly; the placement is fully deterministic.
///
/// Returned poses map world points into each camera frame (+z forward).
/// For `n == 1` the camera sits on the +z axis by convention.
pub fn fibonacci_sphere_views(
    n: usize,
    radius: f64,
    look_at: &Vec3,
    _intr: &CameraIntrinsics,
) -> Vec<SE3Pose> {
    assert!(n >= 1, "need at least one view");
    assert!(radius > 0.0, "radius must be positive");
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let dir = if n == 1 {
                Vec3::new(0.0, 0.0, 1.0)
            } else {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden_angle * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            };
            let eye = look_at + dir * radius;
            look_at_pose(&eye, look_at)
        })
        .collect()
}

/// World-to-camera pose for a camera at `eye` looking at `target`.
///
/// Camera axes: +z forward, +x right, +y down (so the world up direction,
/// +z by convention, maps near the image up direction). Falls back to +y as
/// the up hint when the view direction is parallel to +z.
pub fn look_at_pose(eye: &Vec3, target: &Vec3) -> SE3Pose {
    let forward = (target - eye).normalize();
    let mut up_hint = Vec3::new(0.0, 0.0, 1.0);
    if forward.cross(&up_hint).norm() < 1e-9 {
        up_hint = Vec3::new(0.0, 1.0, 0.0);
    }
    // y_cam points down: minus the up hint, orthogonalized against forward.
    let down = (-up_hint + forward * up_hint.dot(&forward)).normalize();
    let right = down.cross(&forward);
    let rot_mat = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot_mat));
    let translation = -(rotation * eye);
    SE3Pose::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(64.0, 64, 64)
    }

    #[test]
    fn thirty_views_are_well_separated() {
        let views = fibonacci_sphere_views(30, 1.0, &Vec3::zeros(), &intr());
        assert_eq!(views.len(), 30);
        let centers: Vec<Vec3> = views.iter().map(|p| p.center()).collect();
        let mut min_angle = f64::INFINITY;
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                let cosang = centers[i].normalize().dot(&centers[j].normalize());
                min_angle = min_angle.min(cosang.clamp(-1.0, 1.0).acos());
            }
        }
        assert!(
            min_angle.to_degrees() >= 15.0,
            "min pairwise separation {:.2} deg",
            min_angle.to_degrees()
        );
    }

    #[test]
    fn single_view_sits_on_plus_z() {
        let views = fibonacci_sphere_views(1, 2.0, &Vec3::zeros(), &intr());
        assert_eq!(views.len(), 1);
        let c = views[0].center();
        assert!((c - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn two_views_lie_on_the_sphere() {
        let center = Vec3::new(0.1, -0.2, 0.3);
        let views = fibonacci_sphere_views(2, 1.5, &center, &intr());
        for v in &views {
            assert!(((v.center() - center).norm() - 1.5).abs() < 1e-9);
        }
        // Leaning toward antipodal: opposite hemispheres.
        let d0 = (views[0].center() - center).normalize();
        let d1 = (views[1].center() - center).normalize();
        assert!(d0.dot(&d1) < 0.0);
    }

    #[test]
    fn every_view_projects_center_to_principal_point() {
        let center = Vec3::new(0.05, 0.02, -0.03);
        for pose in fibonacci_sphere_views(12, 0.9, &center, &intr()) {
            let (px, depth) = project(&intr(), &pose, &center).unwrap();
            assert!((px.x - 32.0).abs() < 1e-9 && (px.y - 32.0).abs() < 1e-9);
            assert!((depth - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn rotations_are_proper() {
        for pose in fibonacci_sphere_views(7, 1.0, &Vec3::zeros(), &intr()) {
            let m = pose.rotation.to_rotation_matrix();
            assert!((m.matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }
}
