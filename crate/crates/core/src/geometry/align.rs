//! Least-squares similarity alignment of paired point sets (Umeyama).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::{GeometryError, Sim3, Vec3};

/// Finds the similarity `dst ~= s * R * src + t` minimizing the summed
/// squared residuals. With `with_scale` off, `s` is fixed to 1 (rigid).
///
/// Requires at least 3 pairs that are not collinear; degenerate
/// configurations (including an all-coincident cloud) are reported as
/// errors rather than returning an arbitrary rotation.
pub fn umeyama_sim3(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Sim3, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "point counts differ: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mean_src: Vec3 = src.iter().sum::<Vec3>() / n;
    let mean_dst: Vec3 = dst.iter().sum::<Vec3>() / n;

    // Cross-covariance of centered clouds and source variance.
    let mut cov = Matrix3::<f64>::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mean_src;
        let dc = d - mean_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov /= n;
    var_src /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        GeometryError::DegenerateConfiguration("SVD failed to produce U".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        GeometryError::DegenerateConfiguration("SVD failed to produce V^T".into())
    })?;
    let sing = svd.singular_values;

    // Collinear (or coincident) source points leave rank <= 1.
    let rank = sing.iter().filter(|&&s| s > 1e-12 * sing[0].max(1e-300)).count();
    if sing[0] <= 1e-300 || rank < 2 {
        return Err(GeometryError::DegenerateConfiguration(
            "point configuration is collinear or coincident".into(),
        ));
    }

    // Reflection correction via the sign matrix.
    let mut d_diag = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d_diag.z = -1.0;
    }
    let rot_mat = u * Matrix3::from_diagonal(&d_diag) * v_t;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot_mat));

    let scale = if with_scale {
        let trace_ds = sing.dot(&d_diag);
        if var_src <= 1e-300 {
            return Err(GeometryError::DegenerateConfiguration(
                "zero-variance source cloud".into(),
            ));
        }
        trace_ds / var_src
    } else {
        1.0
    };
    let translation = mean_dst - scale * (rotation * mean_src);
    Ok(Sim3::new(scale, rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn identity_on_equal_clouds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let pts = cloud(&mut rng, 10);
        let sim = umeyama_sim3(&pts, &pts, true).unwrap();
        assert!((sim.scale - 1.0).abs() < 1e-12);
        assert!(sim.rotation.angle() < 1e-9);
        assert!(sim.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_forward_constructed_similarity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let src = cloud(&mut rng, 20);
        let rot = UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vec3::new(0.0, 0.0, 1.0)),
            30f64.to_radians(),
        );
        let t = Vec3::new(1.0, 0.0, 0.0);
        let dst: Vec<Vec3> = src.iter().map(|p| 2.0 * (rot * p) + t).collect();
        let sim = umeyama_sim3(&src, &dst, true).unwrap();
        assert!((sim.scale - 2.0).abs() < 1e-9);
        assert!(sim.rotation.angle_to(&rot) < 1e-9);
        assert!((sim.translation - t).norm() < 1e-9);

        // Exact recovery: every source point maps onto its destination.
        for (s, d) in src.iter().zip(&dst) {
            assert!((sim.transform_point(s) - d).norm() < 1e-9);
        }
    }

    #[test]
    fn rigid_mode_fixes_scale() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let src = cloud(&mut rng, 15);
        let dst: Vec<Vec3> = src.iter().map(|p| 3.0 * p).collect();
        let sim = umeyama_sim3(&src, &dst, false).unwrap();
        assert_eq!(sim.scale, 1.0);
    }

    #[test]
    fn beats_hand_picked_candidates_on_noisy_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(34);
        let src = cloud(&mut rng, 40);
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4);
        let dst: Vec<Vec3> = src
            .iter()
            .map(|p| {
                1.4 * (rot * p)
                    + Vec3::new(0.3, -0.2, 0.1)
                    + Vec3::new(
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                    )
            })
            .collect();
        let sim = umeyama_sim3(&src, &dst, true).unwrap();
        let rms = |s: &Sim3| {
            (src.iter()
                .zip(&dst)
                .map(|(a, b)| (s.transform_point(a) - b).norm_squared())
                .sum::<f64>()
                / src.len() as f64)
                .sqrt()
        };
        let fitted = rms(&sim);
        // Candidate transforms: the truth and small perturbations of the fit.
        let candidates = [
            Sim3::new(1.4, rot, Vec3::new(0.3, -0.2, 0.1)),
            Sim3::new(sim.scale * 1.01, sim.rotation, sim.translation),
            Sim3::new(
                sim.scale,
                UnitQuaternion::from_euler_angles(0.01, 0.0, 0.0) * sim.rotation,
                sim.translation,
            ),
            Sim3::new(sim.scale, sim.rotation, sim.translation + Vec3::new(0.005, 0.0, 0.0)),
        ];
        for c in &candidates {
            assert!(fitted <= rms(c) + 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        assert!(umeyama_sim3(&src, &dst, true).is_err());
    }

    #[test]
    fn planar_points_are_fine() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(35);
        let src: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let rot = UnitQuaternion::from_euler_angles(0.3, 0.2, -0.5);
        let dst: Vec<Vec3> = src.iter().map(|p| rot * p + Vec3::new(0.0, 0.1, 0.2)).collect();
        let sim = umeyama_sim3(&src, &dst, false).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            assert!((sim.transform_point(s) - d).norm() < 1e-9);
        }
    }
}
