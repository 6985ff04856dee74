//! Multi-frame pose refinement: damped Gauss-Newton over per-frame 6-DoF
//! increments with a translation smoothness prior and periodic outlier
//! pruning.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion};

use crate::geometry::{CameraIntrinsics, SE3Pose, Trajectory, Vec3};

use super::solve::reprojection_sq;
use super::{Correspondence, PoseError, PoseLossWeights, RansacConfig};

/// One refinement step's bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct RefineIterate {
    pub loss: f64,
    pub accepted: bool,
    /// Whether outlier pruning ran before this step (the objective changes).
    pub pruned: bool,
    /// Active correspondences across all frames.
    pub active: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RefineTrace {
    pub steps: Vec<RefineIterate>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub trajectory: Trajectory,
    pub trace: RefineTrace,
    /// True when damping hit its ceiling without progress (early stop).
    pub early_stop: bool,
}

/// Minimizes
/// `lambda_proj * sum |proj(R_f P + T_f) - p|^2 +
///  lambda_smooth * sum_f |T_f - T_{f-1}|^2`
/// over all frames jointly.
///
/// Rotations update through the exponential map (axis-angle increments
/// composed onto the current rotation); Levenberg damping multiplies by 10
/// on rejected steps and divides by 10 on accepted ones, starting at 1e-3.
/// Every 5 iterations the active set is re-classified RANSAC-style: only
/// correspondences within the inlier threshold of the current pose stay
/// (frames that would drop below 6 keep their previous set). The loss is
/// non-increasing across accepted steps between prunings.
pub fn refine_trajectory(
    corr_sets: &[Vec<Correspondence>],
    init: &Trajectory,
    intr: &CameraIntrinsics,
    weights: &PoseLossWeights,
    iterations: usize,
    ransac: &RansacConfig,
) -> Result<RefineOutcome, PoseError> {
    let n_frames = init.len();
    if corr_sets.len() != n_frames {
        return Err(PoseError::ProviderMismatch {
            got: corr_sets.len(),
            expected: n_frames,
        });
    }
    for (f, set) in corr_sets.iter().enumerate() {
        if set.len() < 6 {
            return Err(PoseError::TooFewCorrespondences {
                need: 6,
                got: set.len(),
            }
            .in_stage(if f == 0 { "refine frame 0" } else { "refine" }));
        }
    }

    let frame_ids: Vec<u64> = init.frame_indices().collect();
    let mut poses: Vec<SE3Pose> = init.poses().cloned().collect();
    let mut active: Vec<Vec<usize>> = corr_sets
        .iter()
        .map(|set| (0..set.len()).collect())
        .collect();

    let loss_of = |poses: &[SE3Pose], active: &[Vec<usize>]| -> f64 {
        let mut acc = 0.0;
        for (f, ids) in active.iter().enumerate() {
            for &i in ids {
                acc += weights.lambda_proj * reprojection_sq(&poses[f], &corr_sets[f][i], intr);
            }
        }
        for w in poses.windows(2) {
            acc += weights.lambda_smooth * (w[1].translation - w[0].translation).norm_squared();
        }
        acc
    };

    let mut mu = 1e-3;
    let mut current = loss_of(&poses, &active);
    let mut trace = RefineTrace::default();
    let mut early_stop = false;
    let threshold_sq = ransac.inlier_threshold * ransac.inlier_threshold;

    for iter in 0..iterations {
        // Outlier pruning every 5 iterations.
        let mut pruned = false;
        if iter > 0 && iter % 5 == 0 {
            for (f, ids) in active.iter_mut().enumerate() {
                let keep: Vec<usize> = (0..corr_sets[f].len())
                    .filter(|&i| reprojection_sq(&poses[f], &corr_sets[f][i], intr) <= threshold_sq)
                    .collect();
                if keep.len() >= 6 && keep.len() < ids.len() {
                    *ids = keep;
                    pruned = true;
                }
            }
            if pruned {
                current = loss_of(&poses, &active);
            }
        }

        // Assemble the damped normal equations.
        let dim = 6 * n_frames;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for (f, ids) in active.iter().enumerate() {
            let rot = poses[f].rotation.to_rotation_matrix();
            for &i in ids {
                let c = &corr_sets[f][i];
                let pc = poses[f].transform_point(&c.point);
                if pc.z <= 1e-6 {
                    continue;
                }
                let inv_z = 1.0 / pc.z;
                // 2x3 projection Jacobian.
                let j_pi = [
                    [intr.fx * inv_z, 0.0, -intr.fx * pc.x * inv_z * inv_z],
                    [0.0, intr.fy * inv_z, -intr.fy * pc.y * inv_z * inv_z],
                ];
                let rp = rot * c.point;
                let d_omega = -skew(&rp);
                // Residual.
                let u = intr.fx * pc.x * inv_z + intr.cx - c.pixel.x;
                let v = intr.fy * pc.y * inv_z + intr.cy - c.pixel.y;
                let sqrt_w = weights.lambda_proj.sqrt();
                // J rows (2 x 6): [J_pi * d_omega | J_pi].
                let mut j = [[0.0f64; 6]; 2];
                for row in 0..2 {
                    for col in 0..3 {
                        let mut acc = 0.0;
                        for k in 0..3 {
                            acc += j_pi[row][k] * d_omega[(k, col)];
                        }
                        j[row][col] = sqrt_w * acc;
                        j[row][3 + col] = sqrt_w * j_pi[row][col];
                    }
                }
                let r = [sqrt_w * u, sqrt_w * v];
                let base = 6 * f;
                for row in 0..2 {
                    for a in 0..6 {
                        g[base + a] += j[row][a] * r[row];
                        for b in 0..6 {
                            h[(base + a, base + b)] += j[row][a] * j[row][b];
                        }
                    }
                }
            }
        }
        // Smoothness terms couple consecutive translation blocks.
        let sw = weights.lambda_smooth;
        if sw > 0.0 {
            for f in 1..n_frames {
                let d = poses[f].translation - poses[f - 1].translation;
                let (a, b) = (6 * (f - 1) + 3, 6 * f + 3);
                for k in 0..3 {
                    g[b + k] += sw * d[k];
                    g[a + k] -= sw * d[k];
                    h[(b + k, b + k)] += sw;
                    h[(a + k, a + k)] += sw;
                    h[(a + k, b + k)] -= sw;
                    h[(b + k, a + k)] -= sw;
                }
            }
        }

        // Levenberg: H + mu I.
        for d in 0..dim {
            h[(d, d)] += mu;
        }
        let Some(delta) = h.cholesky().map(|ch| ch.solve(&(-&g))) else {
            mu *= 10.0;
            trace.steps.push(RefineIterate {
                loss: current,
                accepted: false,
                pruned,
                active: active.iter().map(Vec::len).sum(),
            });
            if mu > 1e8 {
                early_stop = true;
                break;
            }
            continue;
        };

        // Trial update.
        let mut trial = poses.clone();
        for f in 0..n_frames {
            let w = Vec3::new(delta[6 * f], delta[6 * f + 1], delta[6 * f + 2]);
            let t = Vec3::new(delta[6 * f + 3], delta[6 * f + 4], delta[6 * f + 5]);
            let dq = UnitQuaternion::from_scaled_axis(w);
            trial[f] = SE3Pose::new(dq * poses[f].rotation, poses[f].translation + t);
        }
        let trial_loss = loss_of(&trial, &active);
        let accepted = trial_loss <= current;
        if accepted {
            poses = trial;
            current = trial_loss;
            mu = (mu / 10.0).max(1e-12);
        } else {
            mu *= 10.0;
        }
        trace.steps.push(RefineIterate {
            loss: current,
            accepted,
            pruned,
            active: active.iter().map(Vec::len).sum(),
        });
        if !accepted && mu > 1e8 {
            early_stop = true;
            break;
        }
    }

    let entries = frame_ids.into_iter().zip(poses).collect();
    Ok(RefineOutcome {
        trajectory: Trajectory::new(entries)?,
        trace,
        early_stop,
    })
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at_pose, project};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(128.0, 128, 128)
    }

    fn object_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                )
            })
            .collect()
    }

    fn gt_trajectory(frames: usize) -> Trajectory {
        let entries = (0..frames)
            .map(|i| {
                let a = 0.3 + 0.12 * i as f64;
                (
                    i as u64,
                    look_at_pose(&Vec3::new(1.2 * a.cos(), 1.2 * a.sin(), 0.8), &Vec3::zeros()),
                )
            })
            .collect();
        Trajectory::new(entries).unwrap()
    }

    fn exact_corrs(points: &[Vec3], traj: &Trajectory) -> Vec<Vec<Correspondence>> {
        traj.entries()
            .iter()
            .map(|(f, pose)| {
                points
                    .iter()
                    .filter_map(|p| {
                        project(&intr(), pose, p).ok().map(|(px, _)| Correspondence {
                            point: *p,
                            pixel: px,
                            frame: *f as usize,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn exact_start_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let points = object_points(&mut rng, 40);
        let gt = gt_trajectory(4);
        let corrs = exact_corrs(&points, &gt);
        let out = refine_trajectory(
            &corrs,
            &gt,
            &intr(),
            &PoseLossWeights {
                lambda_proj: 10.0,
                lambda_smooth: 0.0,
            },
            10,
            &RansacConfig::default(),
        )
        .unwrap();
        for ((_, got), (_, want)) in out.trajectory.entries().iter().zip(gt.entries()) {
            assert!(got.rotation.angle_to(&want.rotation) < 1e-9);
            assert!((got.translation - want.translation).norm() < 1e-9);
        }
        assert!(out.trace.steps[0].loss < 1e-16);
    }

    #[test]
    fn jittered_start_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let points = object_points(&mut rng, 60);
        let gt = gt_trajectory(5);
        let corrs = exact_corrs(&points, &gt);
        // Jitter: ~2 degrees, ~2 cm.
        let init = Trajectory::new(
            gt.entries()
                .iter()
                .map(|(f, p)| {
                    let axis = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                    .normalize();
                    let dq = UnitQuaternion::from_axis_angle(
                        &nalgebra::Unit::new_normalize(axis),
                        2f64.to_radians(),
                    );
                    let dt = Vec3::new(
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                    );
                    (*f, SE3Pose::new(dq * p.rotation, p.translation + dt))
                })
                .collect(),
        )
        .unwrap();
        let out = refine_trajectory(
            &corrs,
            &init,
            &intr(),
            &PoseLossWeights {
                lambda_proj: 10.0,
                lambda_smooth: 0.0,
            },
            30,
            &RansacConfig::default(),
        )
        .unwrap();
        for ((_, got), (_, want)) in out.trajectory.entries().iter().zip(gt.entries()) {
            assert!(
                got.rotation.angle_to(&want.rotation) < 1e-4,
                "rotation error {}",
                got.rotation.angle_to(&want.rotation)
            );
            assert!(
                (got.translation - want.translation).norm() < 1e-4,
                "translation error {}",
                (got.translation - want.translation).norm()
            );
        }
    }

    #[test]
    fn loss_is_monotone_between_prunings() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let points = object_points(&mut rng, 50);
        let gt = gt_trajectory(4);
        let mut corrs = exact_corrs(&points, &gt);
        // Noise plus a few outliers.
        for set in corrs.iter_mut() {
            for c in set.iter_mut() {
                c.pixel.x += rng.random_range(-0.5..0.5);
                c.pixel.y += rng.random_range(-0.5..0.5);
            }
            for k in 0..4 {
                set[k].pixel.x = rng.random_range(0.0..128.0);
                set[k].pixel.y = rng.random_range(0.0..128.0);
            }
        }
        let out = refine_trajectory(
            &corrs,
            &gt,
            &intr(),
            &PoseLossWeights::default(),
            20,
            &RansacConfig::default(),
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for step in &out.trace.steps {
            if step.pruned {
                last = step.loss; // objective changed; restart the chain
                continue;
            }
            assert!(step.loss <= last + 1e-9, "loss must not increase");
            last = step.loss;
        }
        // Pruning should have dropped the planted outliers.
        let final_active = out.trace.steps.last().unwrap().active;
        assert!(final_active < corrs.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn smoothness_prior_reduces_translation_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let points = object_points(&mut rng, 30);
        // Constant-velocity ground truth.
        let gt = Trajectory::new(
            (0..6)
                .map(|i| {
                    (
                        i as u64,
                        look_at_pose(
                            &Vec3::new(1.2, -0.3 + 0.1 * i as f64, 0.8),
                            &Vec3::zeros(),
                        ),
                    )
                })
                .collect(),
        )
        .unwrap();
        let mut corrs = exact_corrs(&points, &gt);
        for set in corrs.iter_mut() {
            for c in set.iter_mut() {
                c.pixel.x += rng.random_range(-1.5..1.5);
                c.pixel.y += rng.random_range(-1.5..1.5);
            }
        }
        let run = |smooth: f64| {
            let out = refine_trajectory(
                &corrs,
                &gt,
                &intr(),
                &PoseLossWeights {
                    lambda_proj: 10.0,
                    lambda_smooth: smooth,
                },
                25,
                &RansacConfig {
                    inlier_threshold: 6.0,
                    ..Default::default()
                },
            )
            .unwrap();
            crate::metrics::rpe(&out.trajectory, &gt, 1).unwrap().0
        };
        let rpe_smooth = run(3.0);
        let rpe_none = run(0.0);
        assert!(
            rpe_smooth <= rpe_none + 1e-9,
            "smoothness should not hurt RPE_t: {rpe_smooth} vs {rpe_none}"
        );
    }

    #[test]
    fn too_few_correspondences_rejected() {
        let gt = gt_trajectory(2);
        let corrs = vec![Vec::new(), Vec::new()];
        assert!(refine_trajectory(
            &corrs,
            &gt,
            &intr(),
            &PoseLossWeights::default(),
            5,
            &RansacConfig::default(),
        )
        .is_err());
    }
}
