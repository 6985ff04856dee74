//! Visible-contact hand-to-object alignment.
//!
//! Given a hand mesh posed near a reconstructed object, this module detects
//! which hand vertices are actually visible (mask + depth test), traces
//! contacts from those vertices onto the object surface along inward
//! normals, and then optimizes a global hand translation and scale against
//! contact, reprojected-keypoint, and temporal-smoothness losses.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::geometry::{
    project, ray_intersect, CameraIntrinsics, DepthMap, GeometryError, MaskImage, SE3Pose,
    TriMesh, Vec3,
};

/// Depth agreement tolerance for the visibility test, meters.
pub const VISIBILITY_DEPTH_TOL: f64 = 0.005;

/// Default contact search distance along the inward normal, meters.
pub const DEFAULT_CONTACT_RANGE: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("hand mesh must carry unit per-vertex normals")]
    MissingNormals,
    #[error("hand mesh must have exactly 21 keypoints, got {0}")]
    BadKeypointCount(usize),
    #[error("no contact pairs: alignment is unconstrained")]
    NoContacts,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Triangle mesh with 21 labeled keypoints and per-vertex outward normals.
#[derive(Debug, Clone)]
pub struct HandMesh {
    mesh: TriMesh,
    keypoints: Vec<Vec3>,
}

impl HandMesh {
    pub fn new(mesh: TriMesh, keypoints: Vec<Vec3>) -> Result<Self, AlignError> {
        if keypoints.len() != 21 {
            return Err(AlignError::BadKeypointCount(keypoints.len()));
        }
        let normals = mesh.normals().ok_or(AlignError::MissingNormals)?;
        for n in normals {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(AlignError::MissingNormals);
            }
        }
        Ok(Self { mesh, keypoints })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn keypoints(&self) -> &[Vec3] {
        &self.keypoints
    }

    pub fn normals(&self) -> &[Vec3] {
        self.mesh.normals().expect("validated at construction")
    }

    /// Applies `p -> s*p + t` to vertices and keypoints (normals unchanged).
    pub fn transformed(&self, scale: f64, translation: &Vec3) -> HandMesh {
        let verts: Vec<Vec3> = self
            .mesh
            .vertices()
            .iter()
            .map(|v| scale * v + translation)
            .collect();
        let mesh = TriMesh::new(verts, self.mesh.triangles().to_vec())
            .expect("indices unchanged")
            .with_normals(self.normals().to_vec())
            .expect("normal count unchanged");
        let keypoints = self.keypoints.iter().map(|k| scale * k + translation).collect();
        HandMesh { mesh, keypoints }
    }
}

/// One visible hand-object contact: hand vertex index, its position, and the
/// traced object point.
#[derive(Debug, Clone, Copy)]
pub struct ContactPair {
    pub vertex: usize,
    pub hand_point: Vec3,
    pub object_point: Vec3,
}

/// Contact pairs of one frame.
#[derive(Debug, Clone, Default)]
pub struct ContactPairs {
    pub pairs: Vec<ContactPair>,
}

/// Global hand alignment parameters: `p -> s*p + t_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub translation: Vec3,
    pub scale: f64,
}

impl AlignParams {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * p + self.translation
    }
}

/// Loss term weights.
#[derive(Debug, Clone, Copy)]
pub struct AlignWeights {
    pub lambda_contact: f64,
    pub lambda_kpoints: f64,
    pub lambda_vsmooth: f64,
}

impl Default for AlignWeights {
    fn default() -> Self {
        Self {
            lambda_contact: 200.0,
            lambda_kpoints: 20.0,
            lambda_vsmooth: 20.0,
        }
    }
}

/// Indices of hand vertices visible in one view: the vertex projects inside
/// the hand mask and its camera depth agrees with the rendered scene depth
/// within [`VISIBILITY_DEPTH_TOL`] (self-occlusion test).
///
/// Silhouette-boundary vertices can land on pixels whose centers were never
/// covered by the rasterizer, so the depth comparison scans a 5x5 pixel
/// neighborhood and accepts if any rendered depth there agrees.
pub fn visible_vertices(
    hand: &HandMesh,
    intr: &CameraIntrinsics,
    camera: &SE3Pose,
    scene_depth: &DepthMap,
    hand_mask: &MaskImage,
) -> BTreeSet<usize> {
    let mut visible = BTreeSet::new();
    for (i, v) in hand.mesh.vertices().iter().enumerate() {
        let Ok((px, depth)) = project(intr, camera, v) else {
            continue;
        };
        if !hand_mask.contains_coord(px.x, px.y) {
            continue;
        }
        let mut depth_ok = false;
        'scan: for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let (u, v2) = (px.x + dx as f64, px.y + dy as f64);
                if let Some(rendered) = scene_depth.sample(u, v2) {
                    if (depth - rendered).abs() <= VISIBILITY_DEPTH_TOL {
                        depth_ok = true;
                        break 'scan;
                    }
                }
            }
        }
        if depth_ok {
            visible.insert(i);
        }
    }
    visible
}

/// Traces a contact for each visible vertex: casts a ray along the negative
/// vertex normal and keeps the nearest object hit within `d_max`.
pub fn trace_contacts(
    visible: &BTreeSet<usize>,
    hand: &HandMesh,
    object: &TriMesh,
    d_max: f64,
) -> Result<ContactPairs, AlignError> {
    if object.is_empty() {
        return Err(AlignError::NoContacts);
    }
    let normals = hand.normals();
    let mut pairs = Vec::new();
    for &i in visible {
        let origin = hand.mesh.vertices()[i];
        let dir = -normals[i];
        if let Some(hit) = ray_intersect(object, &origin, &dir)? {
            if hit.t <= d_max {
                pairs.push(ContactPair {
                    vertex: i,
                    hand_point: origin,
                    object_point: hit.point,
                });
            }
        }
    }
    Ok(ContactPairs { pairs })
}

/// Per-iteration entry of the alignment report.
#[derive(Debug, Clone, Copy)]
pub struct AlignIterate {
    pub loss_contact: f64,
    pub loss_kpoints: f64,
    pub loss_vsmooth: f64,
    pub total: f64,
    pub params: AlignParams,
}

/// Alignment result with the per-iteration trace.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub params: AlignParams,
    pub trace: Vec<AlignIterate>,
}

impl AlignResult {
    /// CSV: `iter,loss_contact,loss_kpoints,loss_vsmooth,total,s,tx,ty,tz`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,loss_contact,loss_kpoints,loss_vsmooth,total,s,tx,ty,tz")?;
        for (i, it) in self.trace.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                i,
                it.loss_contact,
                it.loss_kpoints,
                it.loss_vsmooth,
                it.total,
                it.params.scale,
                it.params.translation.x,
                it.params.translation.y,
                it.params.translation.z
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), AlignError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    }
}

/// Everything the alignment objective needs from one frame.
#[derive(Debug, Clone)]
pub struct AlignFrame {
    pub camera: SE3Pose,
    pub contacts: ContactPairs,
}

struct LossBreakdown {
    contact: f64,
    kpoints: f64,
    vsmooth: f64,
    total: f64,
}

/// Optimizes hand scale and translation by first-order descent with
/// backtracking; only non-increasing steps are accepted, so the loss trace
/// is monotone non-increasing.
///
/// Objective terms: unsquared contact distances, unsquared 2D reprojection
/// distances of the paired points, and squared camera-space motion of paired
/// vertices between consecutive frames. Scale and translation are global
/// across frames; per-frame variation enters only through the camera poses.
pub fn align_hand(
    hand: &HandMesh,
    frames: &[AlignFrame],
    intr: &CameraIntrinsics,
    weights: &AlignWeights,
    iterations: usize,
) -> Result<AlignResult, AlignError> {
    let n_pairs: usize = frames.iter().map(|f| f.contacts.pairs.len()).sum();
    if n_pairs == 0 {
        return Err(AlignError::NoContacts);
    }
    // Vertices appearing in any frame's contact set drive the smoothness term.
    let smooth_vertices: Vec<usize> = {
        let mut set = BTreeSet::new();
        for f in frames {
            for p in &f.contacts.pairs {
                set.insert(p.vertex);
            }
        }
        set.into_iter().collect()
    };

    let verts = hand.mesh.vertices();
    let eval = |params: &AlignParams| -> LossBreakdown {
        let mut contact = 0.0;
        let mut kpoints = 0.0;
        for f in frames {
            for p in &f.contacts.pairs {
                let hp = params.apply(&p.hand_point);
                contact += (hp - p.object_point).norm();
                if let (Ok((ph, _)), Ok((po, _))) = (
                    project(intr, &f.camera, &hp),
                    project(intr, &f.camera, &p.object_point),
                ) {
                    kpoints += (ph - po).norm();
                }
            }
        }
        let mut vsmooth = 0.0;
        for w in frames.windows(2) {
            for &vi in &smooth_vertices {
                let p = params.apply(&verts[vi]);
                let a = w[0].camera.transform_point(&p);
                let b = w[1].camera.transform_point(&p);
                vsmooth += (b - a).norm_squared();
            }
        }
        let total = weights.lambda_contact * contact
            + weights.lambda_kpoints * kpoints
            + weights.lambda_vsmooth * vsmooth;
        LossBreakdown {
            contact,
            kpoints,
            vsmooth,
            total,
        }
    };

    // Analytic gradient of the total loss w.r.t. (t, s).
    let gradient = |params: &AlignParams| -> (Vec3, f64) {
        let mut g_t = Vec3::zeros();
        let mut g_s = 0.0;
        for f in frames {
            let rot = f.camera.rotation.to_rotation_matrix();
            for p in &f.contacts.pairs {
                let hp = params.apply(&p.hand_point);
                // Contact term: gradient of the unsquared norm.
                let diff = hp - p.object_point;
                let norm = diff.norm();
                if norm > 1e-12 {
                    let u = diff / norm;
                    g_t += weights.lambda_contact * u;
                    g_s += weights.lambda_contact * u.dot(&p.hand_point);
                }
                // Keypoint term through the pinhole Jacobian.
                let pc = f.camera.transform_point(&hp);
                if pc.z > 1e-6 {
                    if let (Ok((ph, _)), Ok((po, _))) = (
                        project(intr, &f.camera, &hp),
                        project(intr, &f.camera, &p.object_point),
                    ) {
                        let r2 = ph - po;
                        let n2 = r2.norm();
                        if n2 > 1e-12 {
                            let ru = r2 / n2;
                            let ju = Vec3::new(intr.fx / pc.z, 0.0, -intr.fx * pc.x / (pc.z * pc.z));
                            let jv = Vec3::new(0.0, intr.fy / pc.z, -intr.fy * pc.y / (pc.z * pc.z));
                            let d_cam = ru.x * ju + ru.y * jv;
                            let g_world = rot.matrix().transpose() * d_cam;
                            g_t += weights.lambda_kpoints * g_world;
                            g_s += weights.lambda_kpoints * g_world.dot(&p.hand_point);
                        }
                    }
                }
            }
        }
        for w in frames.windows(2) {
            let ra = w[0].camera.rotation.to_rotation_matrix();
            let rb = w[1].camera.rotation.to_rotation_matrix();
            let dr = rb.matrix() - ra.matrix();
            let dt = w[1].camera.translation - w[0].camera.translation;
            for &vi in &smooth_vertices {
                let p = params.apply(&verts[vi]);
                let d = dr * p + dt;
                let g_term = 2.0 * weights.lambda_vsmooth * (dr.transpose() * d);
                g_t += g_term;
                g_s += g_term.dot(&verts[vi]);
            }
        }
        (g_t, g_s)
    };

    let mut params = AlignParams::identity();
    let mut current = eval(&params);
    let mut trace = vec![AlignIterate {
        loss_contact: current.contact,
        loss_kpoints: current.kpoints,
        loss_vsmooth: current.vsmooth,
        total: current.total,
        params,
    }];
    // Step length along the preconditioned, normalized descent direction;
    // the unsquared terms make the objective piecewise-smooth, so a
    // direction-normalized line search is far more robust than raw gradient
    // steps. The scale coordinate is divided by the mean squared hand-point
    // radius (its natural lever arm) so it converges at the same rate as
    // the translation.
    let lever: f64 = {
        let mut acc = 0.0;
        let mut count = 0usize;
        for f in frames {
            for p in &f.contacts.pairs {
                acc += p.hand_point.norm_squared();
                count += 1;
            }
        }
        (acc / count.max(1) as f64).max(1e-6)
    };
    let mut step = 1e-2;

    for _ in 0..iterations {
        let (g_t, g_s_raw) = gradient(&params);
        let g_s = g_s_raw / lever;
        let g_norm = (g_t.norm_squared() + g_s * g_s).sqrt();
        if g_norm < 1e-12 || step < 1e-14 {
            break;
        }
        let (d_t, d_s) = (g_t / g_norm, g_s / g_norm);
        let mut accepted = false;
        let mut trial = step;
        for _ in 0..60 {
            let cand = AlignParams {
                translation: params.translation - trial * d_t,
                scale: params.scale - trial * d_s,
            };
            if cand.scale > 1e-6 {
                let cand_loss = eval(&cand);
                if cand_loss.total <= current.total {
                    params = cand;
                    current = cand_loss;
                    step = trial * 2.0;
                    accepted = true;
                    break;
                }
            }
            trial *= 0.5;
        }
        if !accepted {
            step = trial;
        }
        trace.push(AlignIterate {
            loss_contact: current.contact,
            loss_kpoints: current.kpoints,
            loss_vsmooth: current.vsmooth,
            total: current.total,
            params,
        });
    }

    Ok(AlignResult { params, trace })
}
