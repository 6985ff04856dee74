//! Procedural capsule-finger hand posed to grasp an object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ray_intersect, TriMesh, Vec3};
use crate::handalign::HandMesh;

use super::{derive_seed, SynthError};

/// Fingertip standoff from the object surface, meters (within the 5 mm
/// grasp-contact requirement).
const TIP_STANDOFF: f64 = 0.003;
/// Capsule radius of finger segments.
const FINGER_RADIUS: f64 = 0.028;
/// Palm half extents (lateral, lateral, thickness).
const PALM_HALF: (f64, f64, f64) = (0.088, 0.088, 0.026);

/// Builds a hand grasping the object: a palm box plus five 3-segment capsule
/// fingers whose tips rest on the object surface, with 21 keypoints (wrist
/// followed by four joints per finger, thumb-to-little order).
///
/// Seeded retries pick a new approach direction until at least two
/// fingertips find surface contact; after 100 failed attempts the scene is
/// rejected.
pub fn gen_hand_occluder(
    seed: u64,
    grasp_offset: f64,
    object: &TriMesh,
) -> Result<HandMesh, SynthError> {
    if object.is_empty() {
        return Err(SynthError::SceneRejected("object mesh is empty".into()));
    }
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200 + attempt));
        // Approach direction: random azimuth, elevation kept in the band the
        // cameras orbit in, so the grasp faces the clip like handheld footage.
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el = rng.random_range(-0.1..0.9f64);
        let u = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let origin = u * 1.5;
        let Ok(Some(hit)) = ray_intersect(object, &origin, &(-u)) else {
            continue;
        };
        let anchor = hit.point;
        let e1 = orthonormal(&u);
        let e2 = u.cross(&e1);

        let palm_center = anchor + u * (0.045 + grasp_offset.max(0.0));
        let mut contacts = 0usize;
        let mut fingers: Vec<[Vec3; 4]> = Vec::with_capacity(5);
        for (f, spread) in [-0.7f64, -0.35, 0.0, 0.35, 0.7].iter().enumerate() {
            let lateral = e1 * spread.sin() + e2 * spread.cos();
            // Finger base on the palm rim, tip aimed at the surface near the
            // anchor with per-finger lateral offset.
            let base = palm_center + lateral * PALM_HALF.0 * 0.9 - u * PALM_HALF.2 * 0.5;
            // Aim slightly beneath the surface so near-tangential rays still
            // pierce curved objects.
            let target = anchor + lateral * (0.07 + 0.008 * f as f64) - u * 0.03;
            let dir = target - base;
            let dist = dir.norm();
            if dist < 1e-9 {
                continue;
            }
            let dir = dir / dist;
            let tip = match ray_intersect(object, &base, &dir) {
                Ok(Some(h)) if h.t < 0.25 => {
                    contacts += 1;
                    h.point - dir * TIP_STANDOFF
                }
                // No surface along this finger: leave it extended.
                _ => base + dir * 0.11,
            };
            // Joint chain with a slight outward bow.
            let mcp = base;
            let pip = mcp + (tip - mcp) * 0.42 + u * 0.010;
            let dip = mcp + (tip - mcp) * 0.74 + u * 0.005;
            fingers.push([mcp, pip, dip, tip]);
        }
        if contacts < 2 {
            continue;
        }

        let wrist = palm_center + u * 0.06;
        let mut keypoints = Vec::with_capacity(21);
        keypoints.push(wrist);
        for f in &fingers {
            keypoints.extend_from_slice(f);
        }

        let mut builder = MeshBuilder::default();
        builder.add_box(&palm_center, &e1, &e2, &u, PALM_HALF);
        for f in &fingers {
            for seg in f.windows(2) {
                builder.add_capsule(&seg[0], &seg[1], FINGER_RADIUS);
            }
        }
        let (verts, tris, normals) = builder.finish();
        let mesh = TriMesh::new(verts, tris)?.with_normals(normals)?;
        return Ok(HandMesh::new(mesh, keypoints)?);
    }
    Err(SynthError::SceneRejected(
        "no grasping hand placement found in 100 attempts".into(),
    ))
}

fn orthonormal(u: &Vec3) -> Vec3 {
    let candidate = if u.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    (candidate - u * candidate.dot(u)).normalize()
}

/// Accumulates triangles with exact per-vertex normals.
#[derive(Default)]
struct MeshBuilder {
    verts: Vec<Vec3>,
    tris: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
}

impl MeshBuilder {
    fn push(&mut self, v: Vec3, n: Vec3) -> usize {
        self.verts.push(v);
        self.normals.push(n);
        self.verts.len() - 1
    }

    /// Axis-aligned-in-frame box with face normals (vertices duplicated per
    /// face so each carries its face normal).
    fn add_box(&mut self, center: &Vec3, e1: &Vec3, e2: &Vec3, e3: &Vec3, half: (f64, f64, f64)) {
        let axes = [(*e1, half.0), (*e2, half.1), (*e3, half.2)];
        for face_axis in 0..3 {
            for sign in [-1.0f64, 1.0] {
                let (n_axis, n_half) = axes[face_axis];
                let (a_axis, a_half) = axes[(face_axis + 1) % 3];
                let (b_axis, b_half) = axes[(face_axis + 2) % 3];
                let normal = n_axis * sign;
                let face_center = center + normal * n_half;
                let corners = [
                    face_center - a_axis * a_half - b_axis * b_half,
                    face_center + a_axis * a_half - b_axis * b_half,
                    face_center + a_axis * a_half + b_axis * b_half,
                    face_center - a_axis * a_half + b_axis * b_half,
                ];
                let ids: Vec<usize> = corners.iter().map(|c| self.push(*c, normal)).collect();
                // Winding consistent with the outward normal.
                let (t1, t2) = if sign > 0.0 {
                    ([ids[0], ids[1], ids[2]], [ids[0], ids[2], ids[3]])
                } else {
                    ([ids[0], ids[2], ids[1]], [ids[0], ids[3], ids[2]])
                };
                self.tris.push(t1);
                self.tris.push(t2);
            }
        }
    }

    /// Capsule from `a` to `b`: cylinder side plus hemispherical caps.
    /// Normals are exact (radial on the side, spherical on the caps).
    fn add_capsule(&mut self, a: &Vec3, b: &Vec3, radius: f64) {
        const SEGS: usize = 8;
        const CAP_RINGS: usize = 2;
        let axis = b - a;
        let len = axis.norm();
        if len < 1e-9 {
            return;
        }
        let axis = axis / len;
        let e1 = orthonormal(&axis);
        let e2 = axis.cross(&e1);
        let ring_dir = |k: usize| -> Vec3 {
            let ang = k as f64 / SEGS as f64 * std::f64::consts::TAU;
            e1 * ang.cos() + e2 * ang.sin()
        };

        // Rings from the bottom pole of cap A to the top pole of cap B.
        // Each ring: (center, radius scale, normal blend).
        let mut rings: Vec<Vec<usize>> = Vec::new();
        let bottom_pole = self.push(a - axis * radius, -axis);
        for ring in 1..=CAP_RINGS {
            // Cap A: latitude from the pole toward the equator.
            let lat = ring as f64 / (CAP_RINGS as f64 + 1.0) * std::f64::consts::FRAC_PI_2;
            let (sin_l, cos_l) = (lat.sin(), lat.cos());
            let ids: Vec<usize> = (0..SEGS)
                .map(|k| {
                    let d = ring_dir(k);
                    let n = d * sin_l - axis * cos_l;
                    self.push(a + n * radius, n)
                })
                .collect();
            rings.push(ids);
        }
        for end in [a, b] {
            let ids: Vec<usize> = (0..SEGS)
                .map(|k| {
                    let d = ring_dir(k);
                    self.push(end + d * radius, d)
                })
                .collect();
            rings.push(ids);
        }
        for ring in 1..=CAP_RINGS {
            let lat = ring as f64 / (CAP_RINGS as f64 + 1.0) * std::f64::consts::FRAC_PI_2;
            // Cap B: mirror of cap A, equator toward the pole.
            let lat = std::f64::consts::FRAC_PI_2 - lat;
            let (sin_l, cos_l) = (lat.sin(), lat.cos());
            let ids: Vec<usize> = (0..SEGS)
                .map(|k| {
                    let d = ring_dir(k);
                    let n = d * sin_l + axis * cos_l;
                    self.push(b + n * radius, n)
                })
                .collect();
            rings.push(ids);
        }
        let top_pole = self.push(b + axis * radius, axis);

        // Fan from the bottom pole to the first ring.
        for k in 0..SEGS {
            let k2 = (k + 1) % SEGS;
            self.tris.push([bottom_pole, rings[0][k2], rings[0][k]]);
        }
        // Quads between consecutive rings.
        for pair in rings.windows(2) {
            for k in 0..SEGS {
                let k2 = (k + 1) % SEGS;
                let (r0, r1) = (&pair[0], &pair[1]);
                self.tris.push([r0[k], r0[k2], r1[k2]]);
                self.tris.push([r0[k], r1[k2], r1[k]]);
            }
        }
        // Fan to the top pole.
        let last = rings.last().unwrap();
        for k in 0..SEGS {
            let k2 = (k + 1) % SEGS;
            self.tris.push([top_pole, last[k], last[k2]]);
        }
    }

    fn finish(self) -> (Vec<Vec3>, Vec<[usize; 3]>, Vec<Vec3>) {
        (self.verts, self.tris, self.normals)
    }
}
