//! Reconstruction and trajectory metrics: Chamfer distance (cm), F-score at
//! distance thresholds, absolute trajectory error, and relative pose error.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{umeyama_sim3, GeometryError, SE3Pose, Trajectory, TriMesh, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("trajectories disagree on frame indices")]
    FrameMismatch,
    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of the evaluation report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub cd_cm: f64,
    pub f5_pct: f64,
    pub f10_pct: f64,
    pub ate_m: f64,
    pub rpe_t_cm: f64,
    pub rpe_r_deg: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "sequence,cd_cm,f5_pct,f10_pct,ate_m,rpe_t_cm,rpe_r_deg";

    pub fn csv_row(&self, sequence: &str) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            sequence, self.cd_cm, self.f5_pct, self.f10_pct, self.ate_m, self.rpe_t_cm, self.rpe_r_deg
        )
    }
}

/// Writes the report CSV: one row per sequence plus a `mean` row.
pub fn write_report_csv<W: Write>(
    mut w: W,
    rows: &[(String, MetricReport)],
) -> std::io::Result<()> {
    writeln!(w, "{}", MetricReport::CSV_HEADER)?;
    for (name, r) in rows {
        writeln!(w, "{}", r.csv_row(name))?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = MetricReport {
            cd_cm: rows.iter().map(|(_, r)| r.cd_cm).sum::<f64>() / n,
            f5_pct: rows.iter().map(|(_, r)| r.f5_pct).sum::<f64>() / n,
            f10_pct: rows.iter().map(|(_, r)| r.f10_pct).sum::<f64>() / n,
            ate_m: rows.iter().map(|(_, r)| r.ate_m).sum::<f64>() / n,
            rpe_t_cm: rows.iter().map(|(_, r)| r.rpe_t_cm).sum::<f64>() / n,
            rpe_r_deg: rows.iter().map(|(_, r)| r.rpe_r_deg).sum::<f64>() / n,
        };
        writeln!(w, "{}", mean.csv_row("mean"))?;
    }
    Ok(())
}

pub fn save_report_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<(), MetricError> {
    let f = std::fs::File::create(path)?;
    write_report_csv(std::io::BufWriter::new(f), rows)?;
    Ok(())
}

/// Area-weighted uniform surface sampling, deterministic per seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>, MetricError> {
    if mesh.is_empty() {
        return Err(MetricError::EmptyMesh);
    }
    assert!(n >= 1, "need at least one sample");
    // Cumulative areas for the inverse-CDF draw.
    let mut cumulative = Vec::with_capacity(mesh.triangles().len());
    let mut total = 0.0;
    for i in 0..mesh.triangles().len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(0.0..total);
        let tri = cumulative.partition_point(|&c| c < u).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle_vertices(tri);
        // Uniform barycentric via the square-root trick.
        let r1: f64 = rng.random_range(0.0..1.0);
        let r2: f64 = rng.random_range(0.0..1.0);
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(a * wa + b * wb + c * wc);
    }
    Ok(points)
}

fn nearest_sq(from: &Vec3, to: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for t in to {
        let d = (from - t).norm_squared();
        if d < best {
            best = d;
        }
    }
    best
}

/// Symmetric unsquared Chamfer distance in centimeters:
/// `100 * 0.5 * (mean_a min_b |a-b| + mean_b min_a |a-b|)`.
pub fn chamfer_cm(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    let ab: f64 = a.iter().map(|p| nearest_sq(p, b).sqrt()).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nearest_sq(p, a).sqrt()).sum::<f64>() / b.len() as f64;
    Ok(100.0 * 0.5 * (ab + ba))
}

/// F-score (percent) at distance threshold `tau` meters:
/// harmonic mean of precision (fraction of `a` within `tau` of `b`) and
/// recall (fraction of `b` within `tau` of `a`); zero when both vanish.
pub fn fscore(a: &[Vec3], b: &[Vec3], tau: f64) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    if tau <= 0.0 {
        return Err(MetricError::BadThreshold(tau));
    }
    let tau_sq = tau * tau;
    let precision =
        a.iter().filter(|p| nearest_sq(p, b) <= tau_sq).count() as f64 / a.len() as f64;
    let recall = b.iter().filter(|p| nearest_sq(p, a) <= tau_sq).count() as f64 / b.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

fn matched_translations(
    est: &Trajectory,
    gt: &Trajectory,
    need: usize,
) -> Result<(Vec<Vec3>, Vec<Vec3>), MetricError> {
    if est.len() != gt.len()
        || est
            .frame_indices()
            .zip(gt.frame_indices())
            .any(|(a, b)| a != b)
    {
        return Err(MetricError::FrameMismatch);
    }
    if est.len() < need {
        return Err(MetricError::TooFewFrames {
            need,
            got: est.len(),
        });
    }
    Ok((
        est.poses().map(|p| p.translation).collect(),
        gt.poses().map(|p| p.translation).collect(),
    ))
}

/// Absolute trajectory error in meters: rigid (no scale by default) Umeyama
/// alignment of estimated onto ground-truth translations, then RMSE.
pub fn ate(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<f64, MetricError> {
    let (est_t, gt_t) = matched_translations(est, gt, 3)?;
    let sim = umeyama_sim3(&est_t, &gt_t, with_scale)?;
    let sum_sq: f64 = est_t
        .iter()
        .zip(&gt_t)
        .map(|(e, g)| (sim.transform_point(e) - g).norm_squared())
        .sum();
    Ok((sum_sq / est_t.len() as f64).sqrt())
}

/// Relative pose error at frame offset `delta`:
/// `E_i = (gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d})`, reported as the RMSE
/// of `|translation(E_i)|` in centimeters and of the rotation angle of
/// `E_i` in degrees.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<(f64, f64), MetricError> {
    assert!(delta >= 1, "delta must be >= 1");
    if est.len() != gt.len()
        || est
            .frame_indices()
            .zip(gt.frame_indices())
            .any(|(a, b)| a != b)
    {
        return Err(MetricError::FrameMismatch);
    }
    if est.len() < delta + 1 {
        return Err(MetricError::TooFewFrames {
            need: delta + 1,
            got: est.len(),
        });
    }
    let est_poses: Vec<&SE3Pose> = est.poses().collect();
    let gt_poses: Vec<&SE3Pose> = gt.poses().collect();
    let count = est_poses.len() - delta;
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    for i in 0..count {
        let rel_est = est_poses[i].inverse().compose(est_poses[i + delta]);
        let rel_gt = gt_poses[i].inverse().compose(gt_poses[i + delta]);
        let err = rel_gt.inverse().compose(&rel_est);
        sum_t += err.translation.norm_squared();
        sum_r += err.rotation_angle().powi(2);
    }
    let rmse_t = (sum_t / count as f64).sqrt();
    let rmse_r = (sum_r / count as f64).sqrt();
    Ok((100.0 * rmse_t, rmse_r.to_degrees()))
}
