//! Pipeline subcommand implementations behind the command-line driver.
//!
//! Each command consumes a resolved [`RunConfig`], reads/writes only under
//! its output directory plus the configured paths, echoes the resolved
//! configuration for provenance, and maps failures onto the documented exit
//! codes: 0 success, 2 configuration error, 3 generation failure, 4 missing
//! checkpoint, 5 trajectory frame-count mismatch (1 for anything else).

use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RunConfig};
use crate::geometry::{voxel_surface, Trajectory, TriMesh};
use crate::handalign::{
    align_hand, trace_contacts, visible_vertices, AlignFrame, AlignWeights, ContactPairs,
};
use crate::metrics::{
    ate, chamfer_cm, fscore, rpe, sample_surface, save_report_csv, MetricReport,
};
use crate::model::{
    build_training_sequence, sample, train, DualBranchModel, ModelConfig, ParamStore,
    TrainOptions, TrainingSequence,
};
use crate::pose::{
    estimate_poses, MatcherConfig, PoseEstimateConfig, PoseLossWeights, RansacConfig,
    SyntheticMatcher, SyntheticPoseProvider,
};
use crate::synth::{
    derive_seed, generate_sequence, read_dataset, write_dataset, OrbitParams, SceneSpec,
    SequenceRecord, SplitLabel,
};

/// Command failure with its process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    fn new(exit_code: i32, message: impl Into<String>) -> Self {
        Self {
            exit_code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(2, e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

fn generic<E: std::fmt::Display>(e: E) -> CliError {
    CliError::new(1, e.to_string())
}

fn scene_spec_from(config: &RunConfig, seed: u64, complexity: usize) -> Result<SceneSpec, CliError> {
    Ok(SceneSpec {
        seed,
        complexity,
        grasp_offset: config.get_f64("data.grasp_offset")?,
        frame_count: config.get_usize("data.frame_count")?,
        orbit: OrbitParams {
            radius: config.get_f64("data.orbit_radius")?,
            elevation_deg: config.get_f64("data.orbit_elevation_deg")?,
            sweep_deg: config.get_f64("data.orbit_sweep_deg")?,
            jitter_deg: config.get_f64("data.orbit_jitter_deg")?,
        },
        image_size: config.get_usize("data.image_size")?,
        voxel_resolution: config.get_usize("data.voxel_resolution")?,
    })
}

pub fn model_config_from(config: &RunConfig) -> Result<ModelConfig, CliError> {
    let mc = ModelConfig {
        geo_blocks: config.get_usize("model.geo_blocks")?,
        mask_blocks: config.get_usize("model.mask_blocks")?,
        heads: config.get_usize("model.heads")?,
        d: config.get_usize("model.d")?,
        g: config.get_usize("model.g")?,
        r: config.get_usize("model.r")?,
        m: config.get_usize("model.m")?,
        n_range: (
            config.get_usize("model.n_min")?,
            config.get_usize("model.n_max")?,
        ),
        geo_patch: config.get_usize("model.geo_patch")?,
        mask_patch: config.get_usize("model.mask_patch")?,
        ff_mult: config.get_usize("model.ff_mult")?,
    };
    mc.validate().map_err(|e| CliError::new(2, e.to_string()))?;
    Ok(mc)
}

/// Generates the dataset described by the `data.*` keys under `out`.
pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let master = config.get_u64("seed")?;
    let count = config.get_usize("data.sequences")?;
    let train_frac = config.get_f64("data.train_fraction")?;
    let val_frac = config.get_f64("data.val_fraction")?;
    let cmin = config.get_usize("data.complexity_min")?;
    let cmax = config.get_usize("data.complexity_max")?;
    if cmin < 1 || cmax > 5 || cmin > cmax {
        return Err(CliError::new(
            2,
            format!("complexity range {cmin}..={cmax} outside 1..=5"),
        ));
    }

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let seq_seed = derive_seed(master, i as u64);
        let complexity = cmin + (seq_seed % (cmax - cmin + 1) as u64) as usize;
        let spec = scene_spec_from(config, seq_seed, complexity)?;
        let seq = generate_sequence(&spec).map_err(|e| CliError::new(3, e.to_string()))?;
        let split = if (i as f64) < train_frac * count as f64 {
            SplitLabel::Train
        } else if (i as f64) < (train_frac + val_frac) * count as f64 {
            SplitLabel::Val
        } else {
            SplitLabel::Test
        };
        records.push((format!("seq_{i:04}"), seq, split));
    }
    write_dataset(&records, out).map_err(|e| CliError::new(3, e.to_string()))?;
    println!("wrote {} sequences to {}", records.len(), out.display());
    Ok(())
}

fn load_sequences(
    config: &RunConfig,
    wanted: Option<SplitLabel>,
) -> Result<Vec<(String, SequenceRecord)>, CliError> {
    let data_dir = config.require_path("paths.data")?;
    let (manifest, sequences) = read_dataset(&data_dir).map_err(generic)?;
    Ok(manifest
        .entries
        .iter()
        .zip(sequences)
        .filter(|((_, split), _)| wanted.map_or(true, |w| *split == w))
        .map(|((id, _), seq)| (id.clone(), seq))
        .collect())
}

fn training_sequences(
    records: &[(String, SequenceRecord)],
    mc: &ModelConfig,
) -> Result<Vec<TrainingSequence>, CliError> {
    records
        .iter()
        .map(|(_, seq)| {
            let frames: Vec<_> = seq.frames.iter().map(|f| f.observation()).collect();
            let completes: Vec<_> = seq.frames.iter().map(|f| &f.complete_mask).collect();
            build_training_sequence(&frames, &completes, &seq.voxels, mc)
                .map_err(|e| CliError::new(2, e.to_string()))
        })
        .collect()
}

/// Trains on the dataset's train split; writes `checkpoint.fhdb` and
/// `loss.csv` under `out`.
pub fn cmd_train(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let mc = model_config_from(config)?;
    let records = load_sequences(config, Some(SplitLabel::Train))?;
    if records.is_empty() {
        return Err(CliError::new(2, "dataset has no train sequences"));
    }
    let data = training_sequences(&records, &mc)?;
    let seed = config.get_u64("seed")?;
    let mut model = DualBranchModel::new(mc, derive_seed(seed, 0)).map_err(generic)?;
    let opts = TrainOptions {
        epochs: config.get_usize("train.epochs")?,
        learning_rate: config.get_f64("train.learning_rate")?,
        beta: config.get_f64("train.beta")?,
        seed: derive_seed(seed, 1),
    };
    let report = train(&mut model, &data, &opts).map_err(generic)?;
    model
        .params()
        .save(&out.join("checkpoint.fhdb"))
        .map_err(generic)?;
    report.save_csv(&out.join("loss.csv")).map_err(generic)?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} sequences; final loss {:.6}",
        report.epochs.len(),
        data.len(),
        last.loss_total
    );
    Ok(())
}

/// Samples reconstructions for one sequence (or every test sequence when no
/// `paths.sequence` is set): writes `recon.ply`, `voxels.bin`, and per-frame
/// `cmask_pred_%04d.pgm` under `out/<sequence>/`.
pub fn cmd_sample(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let checkpoint = config.require_path("paths.checkpoint")?;
    if !checkpoint.exists() {
        return Err(CliError::new(
            4,
            format!("checkpoint not found: {}", checkpoint.display()),
        ));
    }
    let store = ParamStore::load(&checkpoint).map_err(|e| CliError::new(4, e.to_string()))?;
    let mc = model_config_from(config)?;
    let model = DualBranchModel::from_parts(mc.clone(), store)
        .map_err(|e| CliError::new(4, e.to_string()))?;

    let wanted_id = config.get("paths.sequence").to_string();
    let records = load_sequences(config, None)?;
    let selected: Vec<&(String, SequenceRecord)> = if wanted_id.is_empty() {
        records.iter().collect()
    } else {
        records.iter().filter(|(id, _)| *id == wanted_id).collect()
    };
    if selected.is_empty() {
        return Err(CliError::new(2, format!("sequence {wanted_id:?} not found")));
    }
    let steps = config.get_usize("sample.steps")?;
    let seed = config.get_u64("seed")?;

    for (id, seq) in selected {
        let n = mc.n_range.1.min(seq.frames.len());
        let mut img = Vec::with_capacity(n);
        let mut hand = Vec::with_capacity(n);
        for f in seq.frames.iter().take(n) {
            let (i, h) =
                crate::model::stub_encode_frame(&f.observation(), mc.g).map_err(generic)?;
            img.push(i);
            hand.push(h);
        }
        let output = sample(&model, &img, &hand, steps, derive_seed(seed, 2)).map_err(generic)?;
        let dir = out.join(id);
        std::fs::create_dir_all(&dir).map_err(generic)?;
        output.voxels.save(&dir.join("voxels.bin")).map_err(generic)?;
        let mesh = voxel_surface(&output.voxels, config.get_f64("sample.threshold")?)
            .map_err(generic)?;
        mesh.save_ply(&dir.join("recon.ply")).map_err(generic)?;
        for (k, m) in output.masks.iter().enumerate() {
            let frame_index = seq.frames[k].index;
            m.save(&dir.join(format!("cmask_pred_{frame_index:04}.pgm")))
                .map_err(generic)?;
        }
        println!("sampled {id}: {} mask frames, mesh with {} triangles", n, mesh.triangles().len());
    }
    Ok(())
}

/// Estimates the object trajectory of one sequence against a mesh
/// (`paths.mesh`, typically the sampled reconstruction); writes
/// `traj_est.txt` under `out`.
pub fn cmd_pose(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let records = load_sequences(config, None)?;
    let wanted_id = config.get("paths.sequence").to_string();
    let (id, seq) = records
        .iter()
        .find(|(id, _)| wanted_id.is_empty() || *id == wanted_id)
        .ok_or_else(|| CliError::new(2, format!("sequence {wanted_id:?} not found")))?;
    let mesh_path = config.require_path("paths.mesh")?;
    let mesh = TriMesh::load_ply(&mesh_path).map_err(generic)?;
    if mesh.is_empty() {
        return Err(CliError::new(1, "pose mesh has no triangles"));
    }
    let intr = seq.spec.intrinsics();
    let seed = config.get_u64("seed")?;

    let n_refs = config.get_usize("pose.n_refs")?;
    let ref_poses: Vec<_> = crate::pose::reference_views(&mesh, n_refs, &intr)
        .map_err(generic)?
        .iter()
        .map(|r| r.pose)
        .collect();
    let provider = SyntheticPoseProvider::new(
        ref_poses,
        seq.trajectory.poses().cloned().collect(),
        config.get_f64("pose.provider_rot_noise_deg")?,
        config.get_f64("pose.provider_center_noise_m")?,
        derive_seed(seed, 3),
    );
    let matcher = SyntheticMatcher::new(
        mesh.clone(),
        intr,
        MatcherConfig {
            samples: config.get_usize("pose.matcher_samples")?,
            outlier_fraction: config.get_f64("pose.matcher_outlier_fraction")?,
            noise_px: config.get_f64("pose.matcher_noise_px")?,
            seed: derive_seed(seed, 4),
            depth_tolerance: 0.01,
        },
    );
    let cfg = PoseEstimateConfig {
        n_refs,
        rounds: config.get_usize("pose.rounds")?,
        ransac: RansacConfig {
            iterations: config.get_usize("pose.ransac_iterations")?,
            sample_size: config.get_usize("pose.sample_size")?,
            inlier_threshold: config.get_f64("pose.inlier_threshold_px")?,
            seed: derive_seed(seed, 5),
        },
        weights: PoseLossWeights {
            lambda_proj: config.get_f64("pose.lambda_proj")?,
            lambda_smooth: config.get_f64("pose.lambda_smooth")?,
        },
        refine_iterations: config.get_usize("pose.refine_iterations")?,
        seed: derive_seed(seed, 6),
    };
    let traj = estimate_poses(&mesh, &seq.frames, &intr, &provider, &matcher, &cfg)
        .map_err(generic)?;
    traj.save_tum(&out.join("traj_est.txt")).map_err(generic)?;
    println!("estimated {} poses for {id}", traj.len());
    Ok(())
}

/// Aligns the dataset hand to a mesh along an estimated trajectory; writes
/// `hand_aligned.ply` and `align_report.csv` under `out`.
pub fn cmd_align(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let records = load_sequences(config, None)?;
    let wanted_id = config.get("paths.sequence").to_string();
    let (id, seq) = records
        .iter()
        .find(|(id, _)| wanted_id.is_empty() || *id == wanted_id)
        .ok_or_else(|| CliError::new(2, format!("sequence {wanted_id:?} not found")))?;
    let mesh_path = config.require_path("paths.mesh")?;
    let object = TriMesh::load_ply(&mesh_path).map_err(generic)?;
    let traj_path = config.require_path("paths.trajectory")?;
    let traj = Trajectory::load_tum(&traj_path).map_err(generic)?;
    if traj.len() != seq.frames.len() {
        return Err(CliError::new(
            5,
            format!(
                "trajectory has {} frames, sequence has {}",
                traj.len(),
                seq.frames.len()
            ),
        ));
    }
    let intr = seq.spec.intrinsics();
    let d_max = config.get_f64("align.contact_range_m")?;
    let mut frames = Vec::new();
    for (frame, (_, pose)) in seq.frames.iter().zip(traj.entries()) {
        let visible = visible_vertices(&seq.hand, &intr, pose, &frame.depth, &frame.hand_mask);
        let contacts = trace_contacts(&visible, &seq.hand, &object, d_max)
            .unwrap_or_else(|_| ContactPairs::default());
        frames.push(AlignFrame {
            camera: *pose,
            contacts,
        });
    }
    let weights = AlignWeights {
        lambda_contact: config.get_f64("align.lambda_contact")?,
        lambda_kpoints: config.get_f64("align.lambda_kpoints")?,
        lambda_vsmooth: config.get_f64("align.lambda_vsmooth")?,
    };
    let iterations = config.get_usize("align.iterations")?;
    let result = align_hand(&seq.hand, &frames, &intr, &weights, iterations).map_err(generic)?;
    let aligned = seq
        .hand
        .transformed(result.params.scale, &result.params.translation);
    aligned
        .mesh()
        .save_ply(&out.join("hand_aligned.ply"))
        .map_err(generic)?;
    result
        .save_csv(&out.join("align_report.csv"))
        .map_err(generic)?;
    let first = result.trace.first().expect("trace never empty");
    let last = result.trace.last().expect("trace never empty");
    println!(
        "aligned hand for {id}: loss {:.4} -> {:.4}, s = {:.4}",
        first.total, last.total, result.params.scale
    );
    Ok(())
}

/// Evaluates predicted mesh and trajectory against ground truth; writes
/// `report.csv` under `out`.
pub fn cmd_eval(config: &RunConfig, out: &Path) -> CliResult {
    config.write_resolved(out)?;
    let pred_mesh = TriMesh::load_ply(&config.require_path("paths.mesh")?).map_err(generic)?;
    let gt_mesh = TriMesh::load_ply(&config.require_path("paths.gt_mesh")?).map_err(generic)?;
    let pred_traj =
        Trajectory::load_tum(&config.require_path("paths.trajectory")?).map_err(generic)?;
    let gt_traj =
        Trajectory::load_tum(&config.require_path("paths.gt_trajectory")?).map_err(generic)?;
    if pred_traj.len() != gt_traj.len() {
        return Err(CliError::new(
            5,
            format!(
                "trajectory frame counts differ: {} vs {}",
                pred_traj.len(),
                gt_traj.len()
            ),
        ));
    }
    let n = config.get_usize("eval.surface_samples")?;
    let seed = config.get_u64("seed")?;
    // Both meshes sample with the same stream so evaluating a mesh against
    // itself is exactly zero.
    let pred_pts = sample_surface(&pred_mesh, n, derive_seed(seed, 7)).map_err(generic)?;
    let gt_pts = sample_surface(&gt_mesh, n, derive_seed(seed, 7)).map_err(generic)?;
    let report = MetricReport {
        cd_cm: chamfer_cm(&pred_pts, &gt_pts).map_err(generic)?,
        f5_pct: fscore(&pred_pts, &gt_pts, config.get_f64("eval.f5_tau")?).map_err(generic)?,
        f10_pct: fscore(&pred_pts, &gt_pts, config.get_f64("eval.f10_tau")?).map_err(generic)?,
        ate_m: ate(&pred_traj, &gt_traj, false).map_err(generic)?,
        rpe_t_cm: 0.0,
        rpe_r_deg: 0.0,
    };
    let (rpe_t_cm, rpe_r_deg) = rpe(&pred_traj, &gt_traj, config.get_usize("eval.rpe_delta")?)
        .map_err(generic)?;
    let report = MetricReport {
        rpe_t_cm,
        rpe_r_deg,
        ..report
    };
    let sequence = {
        let s = config.get("paths.sequence");
        if s.is_empty() {
            "sequence".to_string()
        } else {
            s.to_string()
        }
    };
    let rows = vec![(sequence, report)];
    save_report_csv(&out.join("report.csv"), &rows).map_err(generic)?;
    println!(
        "cd {:.4} cm, F5 {:.2}%, F10 {:.2}%, ATE {:.5} m, RPE {:.3} cm / {:.3} deg",
        report.cd_cm, report.f5_pct, report.f10_pct, report.ate_m, report.rpe_t_cm, report.rpe_r_deg
    );
    Ok(())
}

/// Merges per-sequence report CSVs into one with a recomputed mean row.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> CliResult {
    if inputs.is_empty() {
        return Err(CliError::new(2, "report needs at least one input CSV"));
    }
    let mut rows = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(generic)?;
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(CliError::new(
                    1,
                    format!("{}: malformed row {:?}", path.display(), line),
                ));
            }
            if fields[0] == "mean" {
                continue;
            }
            let parse = |s: &str| -> Result<f64, CliError> {
                s.parse()
                    .map_err(|_| CliError::new(1, format!("bad number {s:?} in {}", path.display())))
            };
            rows.push((
                fields[0].to_string(),
                MetricReport {
                    cd_cm: parse(fields[1])?,
                    f5_pct: parse(fields[2])?,
                    f10_pct: parse(fields[3])?,
                    ate_m: parse(fields[4])?,
                    rpe_t_cm: parse(fields[5])?,
                    rpe_r_deg: parse(fields[6])?,
                },
            ));
        }
    }
    std::fs::create_dir_all(out).map_err(generic)?;
    save_report_csv(&out.join("report.csv"), &rows).map_err(generic)?;
    let mut stdout_buf = Vec::new();
    crate::metrics::write_report_csv(&mut stdout_buf, &rows).map_err(generic)?;
    print!("{}", String::from_utf8_lossy(&stdout_buf));
    Ok(())
}
