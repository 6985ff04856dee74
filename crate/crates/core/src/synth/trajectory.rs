//! Frustum-constrained orbit camera trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{look_at_pose, project, Trajectory, TriMesh, Vec3};

use super::{derive_seed, SceneSpec, SynthError};

/// In-frustum margin: bbox corners must project at least this fraction of
/// the image size away from every border.
const FRUSTUM_MARGIN: f64 = 0.05;

/// Generates a smooth orbit-with-jitter camera path around the scene.
///
/// Every frame must see all 8 corners of the combined object+hand bounding
/// box inside the image with a 5% margin; candidate paths violating the
/// constraint are rejected and redrawn with a fresh sub-seed (the orbit
/// radius is gradually inflated across retries). Fails after 100 attempts.
pub fn gen_camera_trajectory(
    spec: &SceneSpec,
    object: &TriMesh,
    hand: &TriMesh,
) -> Result<Trajectory, SynthError> {
    spec.validate()?;
    let intr = spec.intrinsics();
    let (olo, ohi) = object
        .aabb()
        .ok_or_else(|| SynthError::SceneRejected("empty object".into()))?;
    let (hlo, hhi) = hand
        .aabb()
        .ok_or_else(|| SynthError::SceneRejected("empty hand".into()))?;
    let lo = olo.inf(&hlo);
    let hi = ohi.sup(&hhi);
    let corners: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    let target = (lo + hi) / 2.0;
    // Orbit azimuths center on the grasp side so the hand stays camera-facing
    // through the clip, the way manipulation footage frames it.
    let hand_center = (hlo + hhi) / 2.0;
    let grasp_dir = hand_center - (olo + ohi) / 2.0;
    let grasp_azimuth = if grasp_dir.xy().norm() > 1e-9 {
        grasp_dir.y.atan2(grasp_dir.x)
    } else {
        0.0
    };
    // Smallest radius at which the bounding sphere fits inside the margin;
    // the configured radius is only a lower bound.
    let bound_radius = (hi - target).norm();
    let tan_max = (0.5 - FRUSTUM_MARGIN) * intr.width as f64 / intr.fx;
    let min_radius = bound_radius * (1.0 / (0.9 * tan_max) + 1.0);
    let base_radius = spec.orbit.radius.max(min_radius);

    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 300 + attempt));
        let inflate = 1.0 + 0.04 * (attempt / 10) as f64;
        let radius = base_radius * inflate * rng.random_range(0.97..1.03);
        let elevation = (spec.orbit.elevation_deg + rng.random_range(-5.0..5.0)).to_radians();
        let phase = grasp_azimuth + rng.random_range(-0.7..0.7)
            - 0.5 * spec.orbit.sweep_deg.to_radians().min(std::f64::consts::PI);
        // Per-frame azimuth step capped so consecutive camera centers stay
        // well under 10% of the radius apart regardless of frame count.
        let step = (spec.orbit.sweep_deg.to_radians() / (spec.frame_count - 1).max(1) as f64)
            .min(5.0f64.to_radians());
        let jitter = spec.orbit.jitter_deg.to_radians();

        let mut entries = Vec::with_capacity(spec.frame_count);
        let mut ok = true;
        let mut prev_eye: Option<Vec3> = None;
        for i in 0..spec.frame_count {
            let az = phase + step * i as f64 + rng.random_range(-jitter..jitter);
            let el = elevation + rng.random_range(-jitter..jitter);
            let rad = radius * (1.0 + rng.random_range(-0.004..0.004));
            let eye = target
                + Vec3::new(
                    rad * el.cos() * az.cos(),
                    rad * el.cos() * az.sin(),
                    rad * el.sin(),
                );
            let pose = look_at_pose(&eye, &target);

            let margin_x = FRUSTUM_MARGIN * intr.width as f64;
            let margin_y = FRUSTUM_MARGIN * intr.height as f64;
            for c in &corners {
                match project(&intr, &pose, c) {
                    Ok((px, _))
                        if px.x >= margin_x
                            && px.x <= intr.width as f64 - margin_x
                            && px.y >= margin_y
                            && px.y <= intr.height as f64 - margin_y => {}
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
            // Smoothness: consecutive camera centers move < 10% of radius.
            if let Some(prev) = prev_eye {
                if (eye - prev).norm() >= 0.1 * radius {
                    ok = false;
                    break;
                }
            }
            prev_eye = Some(eye);
            entries.push((i as u64, pose));
        }
        if ok {
            return Ok(Trajectory::new(entries)?);
        }
    }
    Err(SynthError::SceneRejected(
        "no in-frustum camera path found in 100 attempts".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testutil::icosphere;
    use crate::synth::gen_hand_occluder;

    fn scene() -> (TriMesh, TriMesh) {
        let object = icosphere(0.22);
        let hand = gen_hand_occluder(4, 0.0, &object).unwrap();
        (object, hand.mesh().clone())
    }

    #[test]
    fn every_frame_keeps_scene_in_frustum() {
        let (object, hand) = scene();
        let spec = SceneSpec {
            seed: 11,
            frame_count: 10,
            ..Default::default()
        };
        let traj = gen_camera_trajectory(&spec, &object, &hand).unwrap();
        assert_eq!(traj.len(), 10);
        let intr = spec.intrinsics();
        let (olo, ohi) = object.aabb().unwrap();
        let (hlo, hhi) = hand.aabb().unwrap();
        let lo = olo.inf(&hlo);
        let hi = ohi.sup(&hhi);
        for (_, pose) in traj.entries() {
            for i in 0..8 {
                let c = Vec3::new(
                    if i & 1 == 0 { lo.x } else { hi.x },
                    if i & 2 == 0 { lo.y } else { hi.y },
                    if i & 4 == 0 { lo.z } else { hi.z },
                );
                let (px, _) = project(&intr, pose, &c).unwrap();
                assert!(px.x >= 0.05 * 64.0 && px.x <= 0.95 * 64.0);
                assert!(px.y >= 0.05 * 64.0 && px.y <= 0.95 * 64.0);
            }
        }
    }

    #[test]
    fn consecutive_centers_move_smoothly() {
        let (object, hand) = scene();
        let spec = SceneSpec {
            seed: 12,
            frame_count: 15,
            ..Default::default()
        };
        let traj = gen_camera_trajectory(&spec, &object, &hand).unwrap();
        let centers: Vec<Vec3> = traj.poses().map(|p| p.center()).collect();
        for w in centers.windows(2) {
            assert!((w[1] - w[0]).norm() < 0.1 * spec.orbit.radius * 1.2);
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let (object, hand) = scene();
        let spec = SceneSpec {
            seed: 13,
            frame_count: 6,
            ..Default::default()
        };
        let a = gen_camera_trajectory(&spec, &object, &hand).unwrap();
        let b = gen_camera_trajectory(&spec, &object, &hand).unwrap();
        assert_eq!(a, b);
    }
}
