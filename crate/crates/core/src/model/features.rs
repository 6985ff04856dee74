//! Deterministic stand-in encoders for the image and hand backbones.
//!
//! Real foundation-model features are out of scope; these encoders pool
//! simple occupancy/depth statistics over a `g x g` patch grid so the model
//! still receives pixel-aligned, per-frame conditioning.

use ndarray::Array2;

use crate::geometry::{DepthMap, MaskImage, Pixel};

use super::ModelError;

/// Image-feature channels, per patch:
/// 0 — occluded object-mask coverage fraction,
/// 1 — mean inverse depth over object pixels (0 if none),
/// 2 — whole-frame object coverage (global context, same for all patches).
pub const IMAGE_CHANNELS: usize = 3;

/// Hand-feature channels, per patch:
/// 0 — hand silhouette coverage fraction,
/// 1 — mean inverse depth over hand pixels (0 if none),
/// 2 — distance from patch center to the nearest projected keypoint,
///     normalized by the image diagonal,
/// 3 — same, restricted to the 5 fingertip keypoints.
pub const HAND_CHANNELS: usize = 4;

/// Keypoint count of the procedural hand (wrist + 5 fingers x 4 joints).
pub const KEYPOINT_COUNT: usize = 21;

/// Indices of fingertip keypoints within the 21-keypoint layout.
/// Layout: 0 = wrist, then per finger [mcp, pip, dip, tip].
pub const FINGERTIPS: [usize; 5] = [4, 8, 12, 16, 20];

/// Everything the stub encoders read from one rendered frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameObservation<'a> {
    /// Object mask as observed (hand occlusion applied).
    pub object_mask: &'a MaskImage,
    /// Hand silhouette.
    pub hand_mask: &'a MaskImage,
    /// Scene depth (object and hand, z-buffered).
    pub depth: &'a DepthMap,
    /// Projected 2D hand keypoints; may fall outside the image.
    pub keypoints: &'a [Pixel],
}

/// Fused per-frame conditioning features on a `g x g` patch grid with `d`
/// channels (the output of the fusion MLP).
#[derive(Debug, Clone)]
pub struct PatchFeatureMap {
    pub frames: Vec<Array2<f64>>,
    pub grid: usize,
    pub channels: usize,
}

impl PatchFeatureMap {
    pub fn new(frames: Vec<Array2<f64>>, grid: usize) -> Result<Self, ModelError> {
        let channels = frames.first().map(|f| f.ncols()).unwrap_or(0);
        for f in &frames {
            if f.nrows() != grid * grid || f.ncols() != channels {
                return Err(ModelError::ShapeMismatch {
                    what: "patch feature map",
                    expected: vec![grid * grid, channels],
                    got: vec![f.nrows(), f.ncols()],
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite {
                    stage: "patch features".into(),
                });
            }
        }
        Ok(Self {
            frames,
            grid,
            channels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Pools one frame into per-patch image and hand features on a `g x g` grid.
///
/// Fully deterministic; patch `(px, py)` covers the pixel rectangle
/// `[px*w/g, (px+1)*w/g) x [py*h/g, (py+1)*h/g)` and rows of the output are
/// indexed `py * g + px`. Image width and height must be divisible by `g`.
pub fn stub_encode_frame(
    frame: &FrameObservation,
    g: usize,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let (w, h) = (frame.object_mask.width(), frame.object_mask.height());
    if w % g != 0 || h % g != 0 {
        return Err(ModelError::GridMismatch {
            expected: g,
            got: w.min(h),
        });
    }
    if frame.hand_mask.width() != w
        || frame.hand_mask.height() != h
        || frame.depth.width() != w
        || frame.depth.height() != h
    {
        return Err(ModelError::GridMismatch {
            expected: w,
            got: frame.hand_mask.width(),
        });
    }
    let (pw, ph) = (w / g, h / g);
    let diag = ((w * w + h * h) as f64).sqrt();
    let global_obj = frame.object_mask.count() as f64 / (w * h) as f64;

    let mut img = Array2::zeros((g * g, IMAGE_CHANNELS));
    let mut hand = Array2::zeros((g * g, HAND_CHANNELS));

    for py in 0..g {
        for px in 0..g {
            let row = py * g + px;
            let (mut n_obj, mut n_hand) = (0usize, 0usize);
            let (mut inv_obj, mut inv_hand) = (0.0f64, 0.0f64);
            for y in py * ph..(py + 1) * ph {
                for x in px * pw..(px + 1) * pw {
                    let d = frame.depth.get(x, y);
                    if frame.object_mask.get(x, y) {
                        n_obj += 1;
                        if d.is_finite() {
                            inv_obj += 1.0 / d;
                        }
                    }
                    if frame.hand_mask.get(x, y) {
                        n_hand += 1;
                        if d.is_finite() {
                            inv_hand += 1.0 / d;
                        }
                    }
                }
            }
            let area = (pw * ph) as f64;
            img[(row, 0)] = n_obj as f64 / area;
            img[(row, 1)] = if n_obj > 0 { inv_obj / n_obj as f64 } else { 0.0 };
            img[(row, 2)] = global_obj;

            hand[(row, 0)] = n_hand as f64 / area;
            hand[(row, 1)] = if n_hand > 0 { inv_hand / n_hand as f64 } else { 0.0 };

            let center = Pixel::new((px * pw) as f64 + pw as f64 / 2.0, (py * ph) as f64 + ph as f64 / 2.0);
            let mut d_any = f64::INFINITY;
            let mut d_tip = f64::INFINITY;
            for (k, kp) in frame.keypoints.iter().enumerate() {
                let dist = (kp - center).norm();
                d_any = d_any.min(dist);
                if FINGERTIPS.contains(&k) {
                    d_tip = d_tip.min(dist);
                }
            }
            hand[(row, 2)] = if d_any.is_finite() { d_any / diag } else { 1.0 };
            hand[(row, 3)] = if d_tip.is_finite() { d_tip / diag } else { 1.0 };
        }
    }
    Ok((img, hand))
}
