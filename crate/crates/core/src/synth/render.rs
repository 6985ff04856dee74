//! Rendering of full annotated sequences.

use crate::geometry::{project, rasterize, DepthMap, MaskImage, Pixel};
use crate::handalign::HandMesh;
use crate::geometry::{Trajectory, TriMesh, VoxelGrid};

use super::{FrameRecord, SceneSpec, SequenceRecord, SynthError};

/// Renders every frame of a scene.
///
/// Per frame: the object alone gives the complete mask and object depth; the
/// hand alone gives the silhouette and hand depth; the occluded object mask
/// keeps exactly the object pixels not covered by strictly nearer hand
/// surface, so it is a subset of the complete mask by construction. The
/// scene depth is the per-pixel minimum. Depths are rounded to f32 so
/// rendered records and their on-disk form agree exactly.
pub fn render_sequence(
    spec: &SceneSpec,
    voxels: &VoxelGrid,
    object_mesh: &TriMesh,
    hand: &HandMesh,
    trajectory: &Trajectory,
) -> Result<SequenceRecord, SynthError> {
    let intr = spec.intrinsics();
    let mut frames = Vec::with_capacity(trajectory.len());
    for &(index, pose) in trajectory.entries() {
        let (obj_depth, complete_mask) = rasterize(object_mesh, &intr, &pose);
        let (hand_depth, hand_mask) = rasterize(hand.mesh(), &intr, &pose);

        let (w, h) = (intr.width, intr.height);
        let mut occluded_mask = MaskImage::zeros(w, h);
        let mut depth = DepthMap::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let od = obj_depth.get(x, y);
                let hd = hand_depth.get(x, y);
                if complete_mask.get(x, y) && (!hand_mask.get(x, y) || od <= hd) {
                    occluded_mask.set(x, y, true);
                }
                let nearest = od.min(hd);
                if nearest.is_finite() {
                    depth.set(x, y, nearest as f32 as f64);
                }
            }
        }
        let keypoints: Vec<Pixel> = hand
            .keypoints()
            .iter()
            .map(|k| match project(&intr, &pose, k) {
                Ok((px, _)) => px,
                // Behind-camera keypoints are parked outside the image.
                Err(_) => Pixel::new(-1.0, -1.0),
            })
            .collect();

        frames.push(FrameRecord {
            index: index as usize,
            camera: pose,
            occluded_mask,
            complete_mask,
            hand_mask,
            depth,
            keypoints,
        });
    }
    Ok(SequenceRecord {
        spec: spec.clone(),
        frames,
        voxels: voxels.clone(),
        object_mesh: object_mesh.clone(),
        hand: hand.clone(),
        trajectory: trajectory.clone(),
    })
}

/// Mean occlusion ratio of a sequence: `1 - |occluded| / |complete|`,
/// averaged over frames with a nonempty complete mask.
pub fn occlusion_ratio(seq: &SequenceRecord) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for f in &seq.frames {
        let complete = f.complete_mask.count();
        if complete > 0 {
            acc += 1.0 - f.occluded_mask.count() as f64 / complete as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, SceneSpec};

    #[test]
    fn occluded_equals_complete_without_hand() {
        // Render a scene, then re-render with the hand replaced by a distant
        // one that cannot occlude anything.
        let spec = SceneSpec {
            seed: 21,
            frame_count: 4,
            ..Default::default()
        };
        let seq = generate_sequence(&spec).unwrap();
        let far_hand = seq.hand.transformed(1.0, &crate::geometry::Vec3::new(50.0, 0.0, 0.0));
        let no_occ = render_sequence(
            &seq.spec,
            &seq.voxels,
            &seq.object_mesh,
            &far_hand,
            &seq.trajectory,
        )
        .unwrap();
        for f in &no_occ.frames {
            assert_eq!(f.occluded_mask, f.complete_mask);
        }
    }

    #[test]
    fn hand_in_front_strictly_shrinks_mask() {
        let spec = SceneSpec {
            seed: 22,
            frame_count: 6,
            ..Default::default()
        };
        let seq = generate_sequence(&spec).unwrap();
        // The grasping hand must actually occlude the object in at least one
        // frame of the orbit.
        let shrunk = seq
            .frames
            .iter()
            .any(|f| f.occluded_mask.count() < f.complete_mask.count());
        assert!(shrunk, "hand never occludes the object across the orbit");
        for f in &seq.frames {
            assert!(f.occluded_mask.subset_of(&f.complete_mask));
        }
    }

    #[test]
    fn depths_round_trip_through_f32() {
        let spec = SceneSpec {
            seed: 23,
            frame_count: 3,
            ..Default::default()
        };
        let seq = generate_sequence(&spec).unwrap();
        for f in &seq.frames {
            for &d in f.depth.pixels() {
                if d.is_finite() {
                    assert_eq!(d, d as f32 as f64, "depth stored at f32 precision");
                }
            }
        }
    }
}
