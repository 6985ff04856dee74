//! Anchoring a relative-pose provider's output to the object frame.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{umeyama_sim3, SE3Pose, Sim3, Trajectory, Vec3};

use super::PoseError;

/// Source of relative camera poses for the reference views and the input
/// frames, expressed in the provider's own (gauge) frame: any global
/// similarity may relate it to the object frame.
pub trait PoseProvider {
    /// Poses for the `n_refs` reference views followed by the `n_inputs`
    /// input frames, each mapping gauge-frame points into that camera.
    fn poses(&self, n_refs: usize, n_inputs: usize) -> Result<Vec<SE3Pose>, PoseError>;
}

/// Deterministic stand-in provider: ground-truth poses pushed through a
/// seeded similarity gauge and corrupted by per-camera rotation/center noise.
pub struct SyntheticPoseProvider {
    ref_poses: Vec<SE3Pose>,
    input_poses: Vec<SE3Pose>,
    pub rotation_noise_deg: f64,
    pub center_noise_m: f64,
    pub seed: u64,
}

impl SyntheticPoseProvider {
    pub fn new(
        ref_poses: Vec<SE3Pose>,
        input_poses: Vec<SE3Pose>,
        rotation_noise_deg: f64,
        center_noise_m: f64,
        seed: u64,
    ) -> Self {
        Self {
            ref_poses,
            input_poses,
            rotation_noise_deg,
            center_noise_m,
            seed,
        }
    }
}

impl PoseProvider for SyntheticPoseProvider {
    fn poses(&self, n_refs: usize, n_inputs: usize) -> Result<Vec<SE3Pose>, PoseError> {
        if n_refs != self.ref_poses.len() || n_inputs != self.input_poses.len() {
            return Err(PoseError::ProviderMismatch {
                got: self.ref_poses.len() + self.input_poses.len(),
                expected: n_refs + n_inputs,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // The gauge: a random similarity applied to the world.
        let gauge = Sim3::new(
            rng.random_range(0.4..2.5),
            random_rotation(&mut rng, std::f64::consts::PI),
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        );
        let mut out = Vec::with_capacity(n_refs + n_inputs);
        for pose in self.ref_poses.iter().chain(&self.input_poses) {
            let noisy = apply_gauge_with_noise(
                pose,
                &gauge,
                self.rotation_noise_deg.to_radians(),
                self.center_noise_m,
                &mut rng,
            );
            out.push(noisy);
        }
        Ok(out)
    }
}

/// Expresses an object-frame camera pose in the gauge frame and perturbs it.
pub(crate) fn apply_gauge_with_noise(
    pose: &SE3Pose,
    gauge: &Sim3,
    rot_noise_rad: f64,
    center_noise_m: f64,
    rng: &mut ChaCha8Rng,
) -> SE3Pose {
    // Camera center and orientation in the gauge frame.
    let center_g = gauge.transform_point(&pose.center());
    let rot_g = pose.rotation * gauge.rotation.inverse();
    // Noise.
    let rot = random_rotation(rng, rot_noise_rad) * rot_g;
    let center = center_g
        + Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ) * (center_noise_m * gauge.scale);
    SE3Pose::new(rot, -(rot * center))
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> UnitQuaternion<f64> {
    if max_angle <= 0.0 {
        return UnitQuaternion::identity();
    }
    let axis = loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.norm() > 1e-9 {
            break v.normalize();
        }
    };
    let angle = rng.random_range(0.0..max_angle);
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

/// Anchors provider poses to the object frame.
///
/// The similarity mapping provider-frame camera centers onto the known
/// reference centers is solved with the Umeyama alignment (>= 3 reference
/// views required), then applied to the input-frame poses. The result is
/// invariant to any similarity gauge on the provider output.
pub fn coarse_align(
    provider_poses: &[SE3Pose],
    known_ref_poses: &[SE3Pose],
    n_inputs: usize,
) -> Result<Trajectory, PoseError> {
    let n_refs = known_ref_poses.len();
    if n_refs < 3 {
        return Err(PoseError::TooFewReferences(n_refs));
    }
    if provider_poses.len() != n_refs + n_inputs {
        return Err(PoseError::ProviderMismatch {
            got: provider_poses.len(),
            expected: n_refs + n_inputs,
        });
    }
    let src: Vec<Vec3> = provider_poses[..n_refs].iter().map(|p| p.center()).collect();
    let dst: Vec<Vec3> = known_ref_poses.iter().map(|p| p.center()).collect();
    let sim = umeyama_sim3(&src, &dst, true)?;

    let mut entries = Vec::with_capacity(n_inputs);
    for (i, gauge_pose) in provider_poses[n_refs..].iter().enumerate() {
        let center_obj = sim.transform_point(&gauge_pose.center());
        let rot_obj = gauge_pose.rotation * sim.rotation.inverse();
        let pose = SE3Pose::new(rot_obj, -(rot_obj * center_obj));
        entries.push((i as u64, pose));
    }
    Ok(Trajectory::new(entries)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fibonacci_sphere_views, CameraIntrinsics};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(64.0, 64, 64)
    }

    fn scene_poses() -> (Vec<SE3Pose>, Vec<SE3Pose>) {
        let refs = fibonacci_sphere_views(10, 1.2, &Vec3::zeros(), &intr());
        let inputs: Vec<SE3Pose> = (0..5)
            .map(|i| {
                let a = 0.4 + 0.1 * i as f64;
                crate::geometry::look_at_pose(
                    &Vec3::new(1.3 * a.cos(), 1.3 * a.sin(), 0.7),
                    &Vec3::zeros(),
                )
            })
            .collect();
        (refs, inputs)
    }

    #[test]
    fn noise_free_provider_recovers_ground_truth() {
        let (refs, inputs) = scene_poses();
        let provider = SyntheticPoseProvider::new(refs.clone(), inputs.clone(), 0.0, 0.0, 5);
        let poses = provider.poses(refs.len(), inputs.len()).unwrap();
        let traj = coarse_align(&poses, &refs, inputs.len()).unwrap();
        for ((_, got), want) in traj.entries().iter().zip(&inputs) {
            assert!(got.rotation.angle_to(&want.rotation) < 1e-9);
            assert!((got.translation - want.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn gauge_invariance() {
        let (refs, inputs) = scene_poses();
        let provider = SyntheticPoseProvider::new(refs.clone(), inputs.clone(), 0.0, 0.0, 6);
        let poses = provider.poses(refs.len(), inputs.len()).unwrap();
        let traj_a = coarse_align(&poses, &refs, inputs.len()).unwrap();

        // Pre-multiply the provider output by one more arbitrary similarity.
        let extra = Sim3::new(
            1.7,
            UnitQuaternion::from_euler_angles(0.4, -0.8, 0.2),
            Vec3::new(0.3, -0.5, 0.9),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let regauged: Vec<SE3Pose> = poses
            .iter()
            .map(|p| apply_gauge_with_noise(p, &extra, 0.0, 0.0, &mut rng))
            .collect();
        let traj_b = coarse_align(&regauged, &refs, inputs.len()).unwrap();
        for ((_, a), (_, b)) in traj_a.entries().iter().zip(traj_b.entries()) {
            assert!(a.rotation.angle_to(&b.rotation) < 1e-9);
            assert!((a.translation - b.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_noise_keeps_error_bounded() {
        let (refs, inputs) = scene_poses();
        let provider = SyntheticPoseProvider::new(refs.clone(), inputs.clone(), 5.0, 0.0, 9);
        let poses = provider.poses(refs.len(), inputs.len()).unwrap();
        let traj = coarse_align(&poses, &refs, inputs.len()).unwrap();
        for ((_, got), want) in traj.entries().iter().zip(&inputs) {
            // Per-camera orientation noise passes straight through (5 deg max
            // by construction plus anchoring slack).
            assert!(got.rotation.angle_to(&want.rotation).to_degrees() < 8.0);
        }
    }

    #[test]
    fn too_few_references_is_an_error() {
        let (refs, inputs) = scene_poses();
        let provider = SyntheticPoseProvider::new(refs[..2].to_vec(), inputs.clone(), 0.0, 0.0, 1);
        let poses = provider.poses(2, inputs.len()).unwrap();
        assert!(matches!(
            coarse_align(&poses, &refs[..2], inputs.len()),
            Err(PoseError::TooFewReferences(2))
        ));
    }
}
