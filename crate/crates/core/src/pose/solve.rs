//! Direct linear transform PnP and its RANSAC wrapper.

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project, CameraIntrinsics, SE3Pose, Vec3};

use super::{Correspondence, PoseError, RansacConfig};

/// PnP estimate with its fit quality.
#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub pose: SE3Pose,
    /// Root-mean-square reprojection error over the fitted points, pixels.
    pub reprojection_rms: f64,
}

/// Direct linear transform over >= 6 correspondences followed by projection
/// of the linear rotation estimate onto the nearest rotation matrix.
///
/// 3D points are Hartley-normalized and pixels are mapped to normalized
/// camera coordinates for conditioning. Configurations whose DLT system has
/// more than a one-dimensional nullspace (coplanar/collinear points) are
/// reported as degenerate.
pub fn pnp_dlt(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<PnpSolution, PoseError> {
    if corrs.len() < 6 {
        return Err(PoseError::TooFewCorrespondences {
            need: 6,
            got: corrs.len(),
        });
    }
    // Normalize 3D points: centroid to origin, mean norm sqrt(3).
    let n = corrs.len() as f64;
    let centroid: Vec3 = corrs.iter().map(|c| c.point).sum::<Vec3>() / n;
    let mean_dist = corrs
        .iter()
        .map(|c| (c.point - centroid).norm())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return Err(PoseError::Degenerate("coincident 3D points".into()));
    }
    let scale = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * corrs.len(), 12);
    for (i, c) in corrs.iter().enumerate() {
        let p = (c.point - centroid) * scale;
        let x = (c.pixel.x - intr.cx) / intr.fx;
        let y = (c.pixel.y - intr.cy) / intr.fy;
        let row = 2 * i;
        // [P 1 0 0 -x(P 1)] and [0 0 P 1 -y(P 1)]
        for (j, v) in [p.x, p.y, p.z, 1.0].iter().enumerate() {
            a[(row, j)] = *v;
            a[(row, 8 + j)] = -x * v;
            a[(row + 1, 4 + j)] = *v;
            a[(row + 1, 8 + j)] = -y * v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| PoseError::Degenerate("SVD failed".into()))?;
    let sv = &svd.singular_values;
    // Nullspace must be one-dimensional: the second-smallest singular value
    // has to stand clearly above the smallest. The ratio threshold only
    // rejects true degeneracy (coplanar sets sit at ~1e-15); ill-conditioned
    // minimal samples still pass and get filtered by consensus.
    if sv[0] <= 1e-12 || sv[10] / sv[0] < 1e-10 {
        return Err(PoseError::Degenerate(
            "DLT system is rank-deficient (coplanar or collinear points)".into(),
        ));
    }
    let h = v_t.row(11);
    let m = Matrix3::new(h[0], h[1], h[2], h[4], h[5], h[6], h[8], h[9], h[10]);
    let b = Vec3::new(h[3], h[7], h[11]);

    // Fix the projective sign so points land in front of the camera.
    let mut sign = 0.0;
    for c in corrs.iter().take(8) {
        let p = (c.point - centroid) * scale;
        sign += (m * p + b).z;
    }
    let sign = if sign >= 0.0 { 1.0 } else { -1.0 };
    let m = m * sign;
    let b = b * sign;

    // Nearest rotation and the matching isotropic scale.
    let svd_m = m.svd(true, true);
    let u = svd_m.u.ok_or_else(|| PoseError::Degenerate("rotation SVD failed".into()))?;
    let v_t_m = svd_m.v_t.ok_or_else(|| PoseError::Degenerate("rotation SVD failed".into()))?;
    let mut d = Vec3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t_m.determinant()) < 0.0 {
        d.z = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * v_t_m;
    let s = svd_m.singular_values.dot(&d) / 3.0;
    if s.abs() < 1e-12 {
        return Err(PoseError::Degenerate("zero-scale DLT solution".into()));
    }
    let t = b / s;

    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    // Undo the 3D normalization: x_cam = R (scale (P - centroid)) + t
    // = R_s P + (t - R_s centroid) with R_s = R and metric translation t/scale.
    let translation = t / scale - r * centroid;
    let pose = SE3Pose::new(rotation, translation);

    let reprojection_rms = reprojection_rms(&pose, corrs, intr);
    Ok(PnpSolution {
        pose,
        reprojection_rms,
    })
}

/// RMS reprojection error of a pose over correspondences, pixels.
/// Points behind the camera count as a large fixed error.
pub(crate) fn reprojection_rms(
    pose: &SE3Pose,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> f64 {
    let mut acc = 0.0;
    for c in corrs {
        acc += reprojection_sq(pose, c, intr);
    }
    (acc / corrs.len().max(1) as f64).sqrt()
}

pub(crate) fn reprojection_sq(pose: &SE3Pose, c: &Correspondence, intr: &CameraIntrinsics) -> f64 {
    match project(intr, pose, &c.point) {
        Ok((px, _)) => (px - c.pixel).norm_squared(),
        Err(_) => 1e12,
    }
}

/// Gauss-Newton polish of a pose against its correspondences (geometric
/// reprojection least squares; the DLT alone is algebraic and noise-biased).
pub(crate) fn gn_polish(
    pose: &SE3Pose,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    iterations: usize,
) -> SE3Pose {
    let mut current = *pose;
    let mut current_cost: f64 = corrs
        .iter()
        .map(|c| reprojection_sq(&current, c, intr))
        .sum();
    let mut mu = 1e-6;
    for _ in 0..iterations {
        let rot = current.rotation.to_rotation_matrix();
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        let mut g = nalgebra::Vector6::<f64>::zeros();
        for c in corrs {
            let pc = current.transform_point(&c.point);
            if pc.z <= 1e-6 {
                continue;
            }
            let inv_z = 1.0 / pc.z;
            let j_pi = [
                [intr.fx * inv_z, 0.0, -intr.fx * pc.x * inv_z * inv_z],
                [0.0, intr.fy * inv_z, -intr.fy * pc.y * inv_z * inv_z],
            ];
            let rp = rot * c.point;
            let d_omega = Matrix3::new(0.0, rp.z, -rp.y, -rp.z, 0.0, rp.x, rp.y, -rp.x, 0.0);
            let r = [
                intr.fx * pc.x * inv_z + intr.cx - c.pixel.x,
                intr.fy * pc.y * inv_z + intr.cy - c.pixel.y,
            ];
            let mut j = [[0.0f64; 6]; 2];
            for row in 0..2 {
                for col in 0..3 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += j_pi[row][k] * d_omega[(k, col)];
                    }
                    j[row][col] = acc;
                    j[row][3 + col] = j_pi[row][col];
                }
            }
            for row in 0..2 {
                for a in 0..6 {
                    g[a] += j[row][a] * r[row];
                    for b in 0..6 {
                        h[(a, b)] += j[row][a] * j[row][b];
                    }
                }
            }
        }
        for d in 0..6 {
            h[(d, d)] += mu * (1.0 + h[(d, d)]);
        }
        let Some(delta) = h.cholesky().map(|ch| ch.solve(&(-g))) else {
            mu *= 10.0;
            continue;
        };
        let w = Vec3::new(delta[0], delta[1], delta[2]);
        let t = Vec3::new(delta[3], delta[4], delta[5]);
        let trial = SE3Pose::new(
            UnitQuaternion::from_scaled_axis(w) * current.rotation,
            current.translation + t,
        );
        let trial_cost: f64 = corrs
            .iter()
            .map(|c| reprojection_sq(&trial, c, intr))
            .sum();
        if trial_cost <= current_cost {
            current = trial;
            current_cost = trial_cost;
            mu = (mu / 10.0).max(1e-12);
        } else {
            mu *= 10.0;
        }
    }
    current
}

/// Seeded RANSAC around [`pnp_dlt`] with local optimization.
///
/// Hypotheses sample `cfg.sample_size` correspondences; the best hypothesis
/// maximizes the inlier count with ties resolved to the earlier hypothesis
/// index. The winner is then locally optimized: re-fit on its inliers (DLT
/// followed by Gauss-Newton polish) and the inlier set re-classified, a few
/// rounds until stable. Sampling is driven by a canonical content ordering
/// of the correspondences, so the result does not depend on input order.
/// Returned inlier indices refer to the input slice and come out sorted.
pub fn ransac_pnp(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<(PnpSolution, Vec<usize>), PoseError> {
    let sample_size = cfg.sample_size.max(6);
    if corrs.len() < sample_size {
        return Err(PoseError::TooFewCorrespondences {
            need: sample_size,
            got: corrs.len(),
        });
    }
    // Canonical order: sort indices by correspondence content.
    let mut canon: Vec<usize> = (0..corrs.len()).collect();
    canon.sort_by(|&i, &j| {
        let (a, b) = (&corrs[i], &corrs[j]);
        (a.pixel.x, a.pixel.y, a.point.x, a.point.y, a.point.z, a.frame)
            .partial_cmp(&(b.pixel.x, b.pixel.y, b.point.x, b.point.y, b.point.z, b.frame))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let threshold_sq = cfg.inlier_threshold * cfg.inlier_threshold;
    let classify = |pose: &SE3Pose| -> Vec<usize> {
        canon
            .iter()
            .copied()
            .filter(|&i| reprojection_sq(pose, &corrs[i], intr) <= threshold_sq)
            .collect()
    };

    let mut best: Option<(usize, SE3Pose)> = None; // (inlier count, pose)
    for _ in 0..cfg.iterations.max(1) {
        let picks = rand::seq::index::sample(&mut rng, corrs.len(), sample_size);
        let sample: Vec<Correspondence> = picks.iter().map(|k| corrs[canon[k]]).collect();
        let Ok(sol) = pnp_dlt(&sample, intr) else {
            continue;
        };
        let count = classify(&sol.pose).len();
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, sol.pose));
        }
    }
    let (count, mut pose) = best.ok_or(PoseError::NoConsensus {
        best: 0,
        needed: sample_size,
    })?;
    if count < sample_size {
        return Err(PoseError::NoConsensus {
            best: count,
            needed: sample_size,
        });
    }

    // Local optimization: refit on inliers, polish, re-classify, repeat.
    let mut inliers = classify(&pose);
    for _ in 0..4 {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
        let seeded = match pnp_dlt(&subset, intr) {
            Ok(sol) if sol.reprojection_rms.is_finite() => sol.pose,
            _ => pose,
        };
        let polished = gn_polish(&seeded, &subset, intr, 10);
        // Keep the better of the seeded and polished pose on these inliers.
        let rms_of = |p: &SE3Pose| reprojection_rms(p, &subset, intr);
        pose = if rms_of(&polished) <= rms_of(&seeded) {
            polished
        } else {
            seeded
        };
        let reclassified = classify(&pose);
        if reclassified == inliers {
            break;
        }
        inliers = reclassified;
    }
    if inliers.len() < sample_size {
        return Err(PoseError::NoConsensus {
            best: inliers.len(),
            needed: sample_size,
        });
    }
    let inlier_corrs: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
    let final_rms = reprojection_rms(&pose, &inlier_corrs, intr);
    inliers.sort_unstable();
    Ok((
        PnpSolution {
            pose,
            reprojection_rms: final_rms,
        },
        inliers,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(128.0, 128, 128)
    }

    fn cube_corners() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vec3::new(
                if i & 1 == 0 { -0.2 } else { 0.2 },
                if i & 2 == 0 { -0.2 } else { 0.2 },
                if i & 4 == 0 { -0.2 } else { 0.2 },
            ));
        }
        pts
    }

    fn truth_pose() -> SE3Pose {
        SE3Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -0.5, 0.8),
            Vec3::new(0.05, -0.08, 1.4),
        )
    }

    fn project_all(points: &[Vec3], pose: &SE3Pose) -> Vec<Correspondence> {
        points
            .iter()
            .map(|p| {
                let (px, _) = project(&intr(), pose, p).unwrap();
                Correspondence {
                    point: *p,
                    pixel: px,
                    frame: 0,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_pose_from_cube_corners() {
        let pose = truth_pose();
        let corrs = project_all(&cube_corners(), &pose);
        let sol = pnp_dlt(&corrs, &intr()).unwrap();
        assert!(
            sol.pose.rotation.angle_to(&pose.rotation) < 1e-6,
            "rotation error {}",
            sol.pose.rotation.angle_to(&pose.rotation)
        );
        assert!((sol.pose.translation - pose.translation).norm() < 1e-6);
        assert!(sol.reprojection_rms < 1e-8, "rms {}", sol.reprojection_rms);
    }

    #[test]
    fn noisy_correspondences_keep_rms_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let pose = truth_pose();
        let mut points = cube_corners();
        for _ in 0..40 {
            points.push(Vec3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            ));
        }
        let mut corrs = project_all(&points, &pose);
        for c in corrs.iter_mut() {
            c.pixel.x += rng.random_range(-0.5..0.5);
            c.pixel.y += rng.random_range(-0.5..0.5);
        }
        let sol = pnp_dlt(&corrs, &intr()).unwrap();
        assert!(sol.reprojection_rms <= 1.5, "rms {}", sol.reprojection_rms);
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let pose = truth_pose();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let points: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0))
            .collect();
        let corrs = project_all(&points, &pose);
        assert!(matches!(
            pnp_dlt(&corrs, &intr()),
            Err(PoseError::Degenerate(_))
        ));
    }

    #[test]
    fn too_few_points_rejected() {
        let pose = truth_pose();
        let corrs = project_all(&cube_corners()[..5], &pose);
        assert!(matches!(
            pnp_dlt(&corrs, &intr()),
            Err(PoseError::TooFewCorrespondences { need: 6, got: 5 })
        ));
    }

    fn noisy_scene(
        seed: u64,
        n: usize,
        outlier_frac: f64,
        noise_px: f64,
    ) -> (SE3Pose, Vec<Correspondence>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = truth_pose();
        let mut corrs = Vec::with_capacity(n);
        for _ in 0..n {
            let p = Vec3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            );
            let (mut px, _) = project(&intr(), &pose, &p).unwrap();
            if rng.random_range(0.0..1.0) < outlier_frac {
                px = crate::geometry::Pixel::new(
                    rng.random_range(0.0..128.0),
                    rng.random_range(0.0..128.0),
                );
            } else if noise_px > 0.0 {
                px.x += rng.random_range(-noise_px..noise_px);
                px.y += rng.random_range(-noise_px..noise_px);
            }
            corrs.push(Correspondence {
                point: p,
                pixel: px,
                frame: 0,
            });
        }
        (pose, corrs)
    }

    #[test]
    fn ransac_with_clean_data_keeps_everything() {
        let (pose, corrs) = noisy_scene(93, 60, 0.0, 0.0);
        let cfg = RansacConfig {
            seed: 7,
            ..Default::default()
        };
        let (sol, inliers) = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        assert_eq!(inliers.len(), corrs.len());
        assert!(sol.pose.rotation.angle_to(&pose.rotation) < 1e-6);
        assert!((sol.pose.translation - pose.translation).norm() < 1e-6);
    }

    #[test]
    fn ransac_survives_thirty_percent_outliers() {
        let (pose, corrs) = noisy_scene(94, 100, 0.3, 1.0);
        let cfg = RansacConfig {
            seed: 11,
            ..Default::default()
        };
        let (sol, inliers) = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        let scene_diameter = 0.5;
        assert!(
            sol.pose.rotation.angle_to(&pose.rotation).to_degrees() < 0.5,
            "rotation error {}",
            sol.pose.rotation.angle_to(&pose.rotation).to_degrees()
        );
        assert!((sol.pose.translation - pose.translation).norm() < 0.01 * scene_diameter);
        assert!(inliers.len() >= 60);
    }

    #[test]
    fn ransac_is_deterministic_and_order_invariant() {
        let (_, corrs) = noisy_scene(95, 80, 0.3, 1.0);
        let cfg = RansacConfig {
            seed: 3,
            ..Default::default()
        };
        let (sol_a, inl_a) = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        let (sol_b, inl_b) = ransac_pnp(&corrs, &intr(), &cfg).unwrap();
        assert_eq!(inl_a, inl_b);
        assert_eq!(sol_a.pose, sol_b.pose);

        // Reverse the input order: the same correspondences must be chosen.
        let reversed: Vec<Correspondence> = corrs.iter().rev().cloned().collect();
        let (sol_c, inl_c) = ransac_pnp(&reversed, &intr(), &cfg).unwrap();
        assert_eq!(sol_a.pose, sol_c.pose, "order-invariant pose");
        let set_a: std::collections::BTreeSet<usize> = inl_a.into_iter().collect();
        let set_c: std::collections::BTreeSet<usize> =
            inl_c.into_iter().map(|i| corrs.len() - 1 - i).collect();
        assert_eq!(set_a, set_c, "same inlier correspondences");
    }

    #[test]
    fn ransac_reports_no_consensus() {
        // Pure garbage: random 3D points against random pixels.
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let corrs: Vec<Correspondence> = (0..30)
            .map(|_| Correspondence {
                point: Vec3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ),
                pixel: crate::geometry::Pixel::new(
                    rng.random_range(0.0..128.0),
                    rng.random_range(0.0..128.0),
                ),
                frame: 0,
            })
            .collect();
        let cfg = RansacConfig {
            iterations: 50,
            seed: 1,
            ..Default::default()
        };
        match ransac_pnp(&corrs, &intr(), &cfg) {
            Err(PoseError::NoConsensus { .. }) => {}
            Ok((_, inliers)) => {
                // Chance consensus on random data stays tiny.
                assert!(inliers.len() < 12);
            }
            Err(other) => panic!("unexpected error {other}"),
        }
    }
}
