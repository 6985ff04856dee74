//! Pixel matching between input frames and rendered views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{project, CameraIntrinsics, Pixel, TriMesh};
use crate::metrics::sample_surface;
use crate::synth::FrameRecord;

use super::views::RenderedView;

/// Produces 2D-2D pixel pairs (query pixel, rendered pixel) between an input
/// frame and a rendered view of the mesh. `salt` decorrelates repeated calls
/// deterministically.
pub trait Matcher {
    fn match_frames(
        &self,
        query: &FrameRecord,
        rendered: &RenderedView,
        salt: u64,
    ) -> Vec<(Pixel, Pixel)>;
}

/// Synthetic matcher configuration.
#[derive(Debug, Clone, Copy)]
pub struct MatcherConfig {
    /// Surface points drawn per call.
    pub samples: usize,
    /// Fraction of pairs replaced by uniform-random query pixels.
    pub outlier_fraction: f64,
    /// Gaussian pixel noise applied to inlier query pixels.
    pub noise_px: f64,
    pub seed: u64,
    /// Depth agreement tolerance for the visibility checks, meters.
    pub depth_tolerance: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            samples: 400,
            outlier_fraction: 0.0,
            noise_px: 0.0,
            seed: 0,
            depth_tolerance: 0.01,
        }
    }
}

/// Deterministic matcher for harness use: samples ground-truth-visible
/// surface points and projects them into both views, optionally injecting
/// outliers and pixel noise.
///
/// A point participates only when it is visible in the rendered view and in
/// the query frame (depth agreement against both depth maps, so hand-occluded
/// query pixels drop out).
pub struct SyntheticMatcher {
    mesh: TriMesh,
    intr: CameraIntrinsics,
    pub config: MatcherConfig,
}

impl SyntheticMatcher {
    pub fn new(mesh: TriMesh, intr: CameraIntrinsics, config: MatcherConfig) -> Self {
        Self { mesh, intr, config }
    }
}

impl Matcher for SyntheticMatcher {
    fn match_frames(
        &self,
        query: &FrameRecord,
        rendered: &RenderedView,
        salt: u64,
    ) -> Vec<(Pixel, Pixel)> {
        let cfg = &self.config;
        let seed = crate::synth::derive_seed(cfg.seed, salt.wrapping_add(query.index as u64));
        let points = match sample_surface(&self.mesh, cfg.samples, seed) {
            Ok(p) => p,
            Err(_) => return Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(crate::synth::derive_seed(seed, 1));
        let mut pairs = Vec::new();
        for p in points {
            // Visible in the rendered view?
            let Ok((ref_px, ref_z)) = project(&self.intr, &rendered.pose, &p) else {
                continue;
            };
            let Some(ref_depth) = rendered.depth.sample(ref_px.x, ref_px.y) else {
                continue;
            };
            if (ref_depth - ref_z).abs() > cfg.depth_tolerance {
                continue;
            }
            // Visible in the query frame (ground-truth pose and scene depth,
            // so hand occlusion removes the point)?
            let Ok((q_px, q_z)) = project(&self.intr, &query.camera, &p) else {
                continue;
            };
            if !self.intr.contains(&q_px) {
                continue;
            }
            let Some(q_depth) = query.depth.sample(q_px.x, q_px.y) else {
                continue;
            };
            if (q_depth - q_z).abs() > cfg.depth_tolerance {
                continue;
            }

            let corrupted = if rng.random_range(0.0..1.0) < cfg.outlier_fraction {
                Pixel::new(
                    rng.random_range(0.0..self.intr.width as f64),
                    rng.random_range(0.0..self.intr.height as f64),
                )
            } else {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                Pixel::new(q_px.x + cfg.noise_px * dx, q_px.y + cfg.noise_px * dy)
            };
            pairs.push((corrupted, ref_px));
        }
        pairs
    }
}

/// Lifts matches into 2D-3D correspondences through the rendered depth map:
/// the rendered-side pixel is unprojected with its depth into the object
/// frame; matches landing on empty depth are dropped.
///
/// The depth along the exact match ray comes from bilinear inverse-depth
/// interpolation, which is exact within planar faces; matches straddling a
/// depth discontinuity (or the silhouette) are dropped rather than lifted
/// with a corrupted depth.
pub fn correspondences_from_depth(
    matches: &[(Pixel, Pixel)],
    rendered: &RenderedView,
    intr: &CameraIntrinsics,
    frame: usize,
) -> Vec<super::Correspondence> {
    let mut out = Vec::with_capacity(matches.len());
    for (q_px, r_px) in matches {
        let Some(depth) = rendered.depth.sample_bilinear(r_px.x, r_px.y, 0.05) else {
            continue;
        };
        let Ok(point) = crate::geometry::unproject(intr, &rendered.pose, r_px, depth) else {
            continue;
        };
        out.push(super::Correspondence {
            point,
            pixel: *q_px,
            frame,
        });
    }
    out
}
