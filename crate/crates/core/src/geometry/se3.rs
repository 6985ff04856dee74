//! Rigid and similarity transforms plus timestamped pose sequences.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{GeometryError, Vec3};

/// Rigid transform: `x_out = R * x_in + t`.
///
/// Used both for camera extrinsics (mapping object/world points into the
/// camera frame) and for object-in-camera poses along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl SE3Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a raw quaternion. Quaternions already unit to
    /// machine precision keep their exact bits (round-trip stability);
    /// anything else is renormalized.
    pub fn from_quat_parts(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Self {
        let raw = Quaternion::new(w, x, y, z);
        let q = if (raw.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(raw)
        } else {
            UnitQuaternion::from_quaternion(raw)
        };
        Self::new(q, translation)
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> SE3Pose {
        let r_inv = self.rotation.inverse();
        SE3Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// Rotation angle of this pose in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Camera center expressed in the source frame (`-R^T t`).
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }
}

/// Similarity transform: `x_out = s * R * x_in + t` with `s > 0`.
#[derive(Debug, Clone, Copy)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Sim3 {
    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        assert!(scale > 0.0, "Sim3 scale must be positive, got {scale}");
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> Sim3 {
        let r_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        Sim3::new(s_inv, r_inv, -s_inv * (r_inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3::new(
            self.scale * other.scale,
            self.rotation * other.rotation,
            self.scale * (self.rotation * other.translation) + self.translation,
        )
    }
}

/// Ordered (frame index, pose) sequence with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(u64, SE3Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(u64, SE3Pose)>) -> Result<Self, GeometryError> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(GeometryError::NonIncreasingFrames);
        }
        Ok(Self { entries })
    }

    pub fn push(&mut self, frame: u64, pose: SE3Pose) -> Result<(), GeometryError> {
        if let Some((last, _)) = self.entries.last() {
            if *last >= frame {
                return Err(GeometryError::NonIncreasingFrames);
            }
        }
        self.entries.push((frame, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, SE3Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &SE3Pose> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(f, _)| *f)
    }

    pub fn get(&self, frame: u64) -> Option<&SE3Pose> {
        self.entries
            .binary_search_by_key(&frame, |(f, _)| *f)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Writes TUM format: `timestamp tx ty tz qx qy qz qw`, one line per frame,
    /// timestamps being the frame index as a real number.
    pub fn write_tum<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (frame, pose) in &self.entries {
            let t = &pose.translation;
            let q = pose.rotation.quaternion();
            writeln!(
                w,
                "{} {} {} {} {} {} {} {}",
                *frame as f64, t.x, t.y, t.z, q.i, q.j, q.k, q.w
            )?;
        }
        Ok(())
    }

    pub fn save_tum(&self, path: &Path) -> Result<(), GeometryError> {
        let file = std::fs::File::create(path)?;
        self.write_tum(BufWriter::new(file))?;
        Ok(())
    }

    pub fn read_tum<R: BufRead>(reader: R, name: &str) -> Result<Self, GeometryError> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(super::parse_err(
                    name,
                    format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len()),
                ));
            }
            let mut v = [0.0f64; 8];
            for (i, f) in fields.iter().enumerate() {
                v[i] = f.parse::<f64>().map_err(|e| {
                    super::parse_err(name, format!("line {}: {}", lineno + 1, e))
                })?;
            }
            let pose = SE3Pose::from_quat_parts(v[7], v[4], v[5], v[6], Vec3::new(v[1], v[2], v[3]));
            entries.push((v[0].round() as u64, pose));
        }
        Trajectory::new(entries)
    }

    pub fn load_tum(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path)?;
        Self::read_tum(std::io::BufReader::new(file), &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn random_pose(rng: &mut impl rand::Rng) -> SE3Pose {
        let axis = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let angle = Uniform::new(-3.0, 3.0).unwrap().sample(rng);
        let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let t = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        SE3Pose::new(rot, t)
    }

    #[test]
    fn quaternion_stays_unit() {
        let p = SE3Pose::from_quat_parts(2.0, 0.0, 0.0, 0.0, Vec3::zeros());
        assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_compose_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let id = p.inverse().compose(&p);
            assert!(id.rotation_angle() < 1e-9);
            assert!(id.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let x = Vec3::new(0.3, -0.2, 0.9);
            let lhs = a.compose(&b.compose(&c)).transform_point(&x);
            let rhs = a.compose(&b).compose(&c).transform_point(&x);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    #[test]
    fn sim3_roundtrip() {
        let s = Sim3::new(
            2.5,
            UnitQuaternion::from_euler_angles(0.1, -0.4, 1.2),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let p = Vec3::new(-0.3, 0.7, 0.2);
        let back = s.inverse().transform_point(&s.transform_point(&p));
        assert_relative_eq!(back, p, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_rejects_non_increasing() {
        let p = SE3Pose::identity();
        assert!(Trajectory::new(vec![(0, p), (0, p)]).is_err());
        assert!(Trajectory::new(vec![(3, p), (1, p)]).is_err());
        assert!(Trajectory::new(vec![(0, p), (1, p), (5, p)]).is_ok());
    }

    #[test]
    fn tum_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let entries: Vec<(u64, SE3Pose)> =
            (0..5).map(|i| (i as u64, random_pose(&mut rng))).collect();
        let traj = Trajectory::new(entries).unwrap();
        let mut buf = Vec::new();
        traj.write_tum(&mut buf).unwrap();
        let back = Trajectory::read_tum(std::io::Cursor::new(buf), "test").unwrap();
        assert_eq!(back.len(), traj.len());
        for ((fa, pa), (fb, pb)) in traj.entries().iter().zip(back.entries()) {
            assert_eq!(fa, fb);
            assert!(pa.translation.norm() - pb.translation.norm() < 1e-12);
            assert!(pa.rotation.angle_to(&pb.rotation) < 1e-12);
        }
    }
}
