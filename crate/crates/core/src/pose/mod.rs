//! Render-and-match object pose estimation.
//!
//! Pipeline: render reference views of the reconstructed mesh on a sphere,
//! anchor a pluggable relative-pose provider's output to the object frame
//! through the known reference poses (similarity alignment of camera
//! centers), then iterate render -> match -> 2D/3D correspondences ->
//! RANSAC-PnP -> multi-frame damped Gauss-Newton refinement with a
//! translation smoothness prior.

mod coarse;
mod matcher;
mod pipeline;
mod refine;
mod solve;
mod views;

pub use coarse::{coarse_align, PoseProvider, SyntheticPoseProvider};
pub use matcher::{correspondences_from_depth, Matcher, MatcherConfig, SyntheticMatcher};
pub use pipeline::{estimate_poses, PoseEstimateConfig};
pub use refine::{refine_trajectory, RefineOutcome, RefineTrace};
pub use solve::{pnp_dlt, ransac_pnp, PnpSolution};
pub use views::{reference_views, render_at, RenderedView};

use crate::geometry::{GeometryError, Pixel, Vec3};

/// One 2D-3D correspondence: an object-frame point seen at a query pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vec3,
    pub pixel: Pixel,
    pub frame: usize,
}

/// Weights of the refinement objective
/// `lambda_proj * sum |proj(R P + T) - p|^2 + lambda_smooth * sum |T_t - T_{t-1}|^2`.
#[derive(Debug, Clone, Copy)]
pub struct PoseLossWeights {
    pub lambda_proj: f64,
    pub lambda_smooth: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self {
            lambda_proj: 10.0,
            lambda_smooth: 3.0,
        }
    }
}

/// RANSAC settings for the PnP solver.
#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Minimal sample per hypothesis; the DLT solver needs >= 6.
    pub sample_size: usize,
    /// Inlier reprojection threshold, pixels.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            sample_size: 6,
            inlier_threshold: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PoseError {
    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { need: usize, got: usize },
    #[error("degenerate correspondence configuration: {0}")]
    Degenerate(String),
    #[error("RANSAC found no consensus ({best} inliers of {needed} required)")]
    NoConsensus { best: usize, needed: usize },
    #[error("pose provider output has {got} poses, expected {expected}")]
    ProviderMismatch { got: usize, expected: usize },
    #[error("need at least 3 reference views for anchoring, got {0}")]
    TooFewReferences(usize),
    #[error("empty mesh")]
    EmptyMesh,
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PoseError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl PoseError {
    pub(crate) fn in_stage(self, stage: &'static str) -> PoseError {
        PoseError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
