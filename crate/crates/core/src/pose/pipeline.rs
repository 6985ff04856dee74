//! End-to-end render-and-match pose estimation.

use crate::geometry::{CameraIntrinsics, Trajectory, TriMesh};
use crate::synth::{derive_seed, FrameRecord};

use super::coarse::{coarse_align, PoseProvider};
use super::matcher::{correspondences_from_depth, Matcher};
use super::refine::refine_trajectory;
use super::solve::ransac_pnp;
use super::views::{reference_views, render_at};
use super::{PoseError, PoseLossWeights, RansacConfig};

/// Pipeline settings.
#[derive(Debug, Clone)]
pub struct PoseEstimateConfig {
    /// Reference views rendered for anchoring.
    pub n_refs: usize,
    /// Match/PnP/refine rounds; 0 returns the coarse alignment unchanged.
    pub rounds: usize,
    pub ransac: RansacConfig,
    pub weights: PoseLossWeights,
    /// Gauss-Newton iterations per round.
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for PoseEstimateConfig {
    fn default() -> Self {
        Self {
            n_refs: 30,
            rounds: 3,
            ransac: RansacConfig::default(),
            weights: PoseLossWeights::default(),
            refine_iterations: 15,
            seed: 0,
        }
    }
}

/// Recovers the object-in-camera trajectory of the input frames.
///
/// Stages: reference-view rendering, provider anchoring (coarse alignment),
/// then `rounds` of render -> match -> 2D/3D correspondences -> per-frame
/// RANSAC-PnP re-seeding -> joint trajectory refinement. Stage failures are
/// labeled with the stage that produced them.
pub fn estimate_poses(
    mesh: &TriMesh,
    frames: &[FrameRecord],
    intr: &CameraIntrinsics,
    provider: &dyn PoseProvider,
    matcher: &dyn Matcher,
    cfg: &PoseEstimateConfig,
) -> Result<Trajectory, PoseError> {
    if frames.is_empty() {
        return Err(PoseError::TooFewCorrespondences { need: 1, got: 0 });
    }
    let refs = reference_views(mesh, cfg.n_refs, intr)
        .map_err(|e| e.in_stage("reference rendering"))?;
    let ref_poses: Vec<_> = refs.iter().map(|r| r.pose).collect();

    let provider_poses = provider
        .poses(refs.len(), frames.len())
        .map_err(|e| e.in_stage("pose provider"))?;
    let mut trajectory = coarse_align(&provider_poses, &ref_poses, frames.len())
        .map_err(|e| e.in_stage("coarse alignment"))?;
    // Carry the true frame indices rather than 0..n.
    trajectory = Trajectory::new(
        frames
            .iter()
            .zip(trajectory.poses())
            .map(|(f, p)| (f.index as u64, *p))
            .collect(),
    )?;

    for round in 0..cfg.rounds {
        // Render at the current estimates and gather correspondences. A
        // single view constrains only a one-sided surface sheet and leaves
        // PnP poorly conditioned, so each frame also matches against its
        // nearest reference views.
        let mut corr_sets = Vec::with_capacity(frames.len());
        for (slot, frame) in frames.iter().enumerate() {
            let pose = trajectory.entries()[slot].1;
            let mut corrs = Vec::new();
            let rendered = render_at(mesh, intr, &pose);
            let mut views: Vec<&super::views::RenderedView> = vec![&rendered];
            views.extend(nearest_refs(&refs, &pose, 2));
            for (view_idx, view) in views.into_iter().enumerate() {
                let salt = derive_seed(
                    cfg.seed,
                    ((round * frames.len() + slot) * 8 + view_idx) as u64,
                );
                let matches = matcher.match_frames(frame, view, salt);
                corrs.extend(correspondences_from_depth(&matches, view, intr, frame.index));
            }
            corr_sets.push(corrs);
        }

        // Re-seed each frame's pose with RANSAC-PnP where possible.
        let mut seeded = Vec::with_capacity(frames.len());
        for (slot, corrs) in corr_sets.iter().enumerate() {
            let frame_id = trajectory.entries()[slot].0;
            let ransac_cfg = RansacConfig {
                seed: derive_seed(cfg.ransac.seed, (round * frames.len() + slot) as u64),
                ..cfg.ransac
            };
            match ransac_pnp(corrs, intr, &ransac_cfg) {
                Ok((sol, inliers)) => {
                    let kept: Vec<_> = inliers.iter().map(|&i| corrs[i]).collect();
                    seeded.push((frame_id, sol.pose, kept));
                }
                // Keep the current estimate when consensus fails this round.
                Err(_) => seeded.push((frame_id, trajectory.entries()[slot].1, corrs.clone())),
            }
        }
        let init = Trajectory::new(seeded.iter().map(|(f, p, _)| (*f, *p)).collect())?;
        let sets: Vec<Vec<super::Correspondence>> =
            seeded.into_iter().map(|(_, _, c)| c).collect();
        if sets.iter().any(|s| s.len() < 6) {
            return Err(PoseError::TooFewCorrespondences {
                need: 6,
                got: sets.iter().map(Vec::len).min().unwrap_or(0),
            }
            .in_stage("correspondence gathering"));
        }
        let out = refine_trajectory(
            &sets,
            &init,
            intr,
            &cfg.weights,
            cfg.refine_iterations,
            &cfg.ransac,
        )
        .map_err(|e| e.in_stage("refinement"))?;
        trajectory = out.trajectory;
    }
    Ok(trajectory)
}

/// The `k` reference views whose camera centers are angularly closest (from
/// the object's viewpoint) to the given pose's center.
fn nearest_refs<'a>(
    refs: &'a [super::views::RenderedView],
    pose: &crate::geometry::SE3Pose,
    k: usize,
) -> Vec<&'a super::views::RenderedView> {
    let dir = pose.center().normalize();
    let mut scored: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| (-r.pose.center().normalize().dot(&dir), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    scored.into_iter().take(k).map(|(_, i)| &refs[i]).collect()
}
