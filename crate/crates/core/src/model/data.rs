//! Adapters from rendered scenes to model latents and the carving baseline.

use ndarray::Array2;

use crate::geometry::{project, CameraIntrinsics, MaskImage, SE3Pose, VoxelGrid};

use super::features::FrameObservation;
use super::{stub_encode_frame, ModelConfig, ModelError};

/// One scene prepared for training or evaluation: per-frame stub-encoder
/// features and clean latents in the `[-1, 1]` convention (occupied/
/// foreground maps to +1).
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    /// Per-frame (image, hand) stub features on the `g x g` grid.
    pub frame_features: Vec<(Array2<f64>, Array2<f64>)>,
    /// Per-frame complete-mask latents, `(m^2, 1)`.
    pub mask_targets: Vec<Array2<f64>>,
    /// Per-frame occluded-input masks downsampled to the latent grid,
    /// kept for IoU baselines, `(m^2, 1)`.
    pub occluded_inputs: Vec<Array2<f64>>,
    /// Occupancy latent target, `(r^3, 1)`.
    pub geo_target: Array2<f64>,
}

/// Builds latents for one scene.
///
/// `frames` provides the observations (occluded masks feed the encoder) and
/// `complete_masks` the supervision; `grid` is the ground-truth occupancy.
/// Masks are average-pooled to `m x m` and affinely mapped to `[-1, 1]`.
pub fn build_training_sequence(
    frames: &[FrameObservation],
    complete_masks: &[&MaskImage],
    grid: &VoxelGrid,
    config: &ModelConfig,
) -> Result<TrainingSequence, ModelError> {
    if frames.is_empty() || frames.len() != complete_masks.len() {
        return Err(ModelError::NoFrames);
    }
    let r3 = config.r * config.r * config.r;
    let [nx, ny, nz] = grid.resolution();
    if nx != config.r || ny != config.r || nz != config.r {
        return Err(ModelError::ShapeMismatch {
            what: "voxel grid resolution",
            expected: vec![config.r; 3],
            got: vec![nx, ny, nz],
        });
    }
    let mut geo = Array2::zeros((r3, 1));
    for (i, &occ) in grid.values().iter().enumerate() {
        geo[(i, 0)] = if occ >= 0.5 { 1.0 } else { -1.0 };
    }

    let mut frame_features = Vec::with_capacity(frames.len());
    let mut mask_targets = Vec::with_capacity(frames.len());
    let mut occluded_inputs = Vec::with_capacity(frames.len());
    for (frame, complete) in frames.iter().zip(complete_masks) {
        frame_features.push(stub_encode_frame(frame, config.g)?);
        mask_targets.push(mask_to_latent(complete, config.m)?);
        occluded_inputs.push(mask_to_latent(frame.object_mask, config.m)?);
    }
    Ok(TrainingSequence {
        frame_features,
        mask_targets,
        occluded_inputs,
        geo_target: geo,
    })
}

/// Average-pools a binary mask onto `m x m` and maps coverage to `[-1, 1]`.
pub fn mask_to_latent(mask: &MaskImage, m: usize) -> Result<Array2<f64>, ModelError> {
    let (w, h) = (mask.width(), mask.height());
    if w % m != 0 || h % m != 0 {
        return Err(ModelError::ShapeMismatch {
            what: "mask downsampling",
            expected: vec![m],
            got: vec![w, h],
        });
    }
    let (bw, bh) = (w / m, h / m);
    let mut out = Array2::zeros((m * m, 1));
    for my in 0..m {
        for mx in 0..m {
            let mut cnt = 0usize;
            for y in my * bh..(my + 1) * bh {
                for x in mx * bw..(mx + 1) * bw {
                    cnt += mask.get(x, y) as usize;
                }
            }
            let frac = cnt as f64 / (bw * bh) as f64;
            out[(my * m + mx, 0)] = 2.0 * frac - 1.0;
        }
    }
    Ok(out)
}

/// Binarizes a `(m^2, 1)` latent at sigmoid(0.5), i.e. latent > 0.
pub fn latent_to_mask(latent: &Array2<f64>, m: usize) -> MaskImage {
    let mut mask = MaskImage::zeros(m, m);
    for y in 0..m {
        for x in 0..m {
            mask.set(x, y, latent[(y * m + x, 0)] > 0.0);
        }
    }
    mask
}

/// Visibility-carving baseline: start from a fully occupied grid shaped like
/// `reference` and erase every voxel whose projection lands inside the image
/// but outside the observed (occluded) mask in any frame.
pub fn carve_baseline(
    reference: &VoxelGrid,
    observed_masks: &[&MaskImage],
    poses: &[SE3Pose],
    intr: &CameraIntrinsics,
) -> VoxelGrid {
    assert_eq!(observed_masks.len(), poses.len());
    let mut grid = reference.clone();
    let [nx, ny, nz] = grid.resolution();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let center = grid.cell_center(x, y, z);
                let mut occupied = 1.0;
                for (mask, pose) in observed_masks.iter().zip(poses) {
                    match project(intr, pose, &center) {
                        Ok((px, _)) if intr.contains(&px) => {
                            if !mask.contains_coord(px.x, px.y) {
                                occupied = 0.0;
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                grid.set(x, y, z, occupied).expect("0/1 occupancy");
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn mask_latent_roundtrip_on_solid_blocks() {
        let mut mask = MaskImage::zeros(8, 8);
        for y in 0..4 {
            for x in 0..8 {
                mask.set(x, y, true);
            }
        }
        let latent = mask_to_latent(&mask, 4).unwrap();
        // Top half fully on (+1), bottom half off (-1).
        for my in 0..4 {
            for mx in 0..4 {
                let v = latent[(my * 4 + mx, 0)];
                assert_eq!(v, if my < 2 { 1.0 } else { -1.0 });
            }
        }
        let back = latent_to_mask(&latent, 4);
        assert_eq!(back.count(), 8);
    }

    #[test]
    fn carve_keeps_voxels_inside_silhouette() {
        // A 4^3 grid observed by one camera looking down +z; mask covers the
        // left half of the image, so voxels projecting right get carved.
        let grid = VoxelGrid::centered_cube(4, 0.5).unwrap();
        let intr = CameraIntrinsics::centered(32.0, 32, 32);
        let pose = SE3Pose::new(nalgebra::UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 2.0));
        let mut mask = MaskImage::zeros(32, 32);
        for y in 0..32 {
            for x in 0..16 {
                mask.set(x, y, true);
            }
        }
        let carved = carve_baseline(&grid, &[&mask], &[pose], &intr);
        let mut left = 0;
        let mut right = 0;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    if carved.get(x, y, z) >= 0.5 {
                        if x < 2 {
                            left += 1;
                        } else {
                            right += 1;
                        }
                    }
                }
            }
        }
        assert!(left > 0, "visible half survives");
        assert_eq!(right, 0, "background half carved away");
    }
}
