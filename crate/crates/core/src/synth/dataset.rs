//! On-disk dataset layout with manifest, per-sequence files, and checksums.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.txt                      version line + "id split" entries
//! <seq_id>/spec.txt                 key=value scene spec
//! <seq_id>/frame_%04d.omask.pgm     occluded object mask
//! <seq_id>/frame_%04d.cmask.pgm     complete object mask
//! <seq_id>/frame_%04d.hmask.pgm     hand silhouette
//! <seq_id>/frame_%04d.depth.bin     scene depth
//! <seq_id>/object.ply               object surface mesh
//! <seq_id>/object_voxels.bin        VOXL1 occupancy grid
//! <seq_id>/hand.ply                 hand mesh with normals
//! <seq_id>/traj_gt.txt              TUM ground-truth trajectory
//! <seq_id>/keypoints.csv            frame,keypoint,u,v rows
//! <seq_id>/checksums.txt            fnv1a64 of every file above
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::geometry::{DepthMap, MaskImage, Pixel, Trajectory, TriMesh, VoxelGrid};
use crate::handalign::HandMesh;

use super::{FrameRecord, OrbitParams, SceneSpec, SequenceRecord, SynthError};

const DATASET_VERSION: u32 = 1;

/// Train/validation/test split label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl SplitLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitLabel::Train),
            "val" => Some(SplitLabel::Val),
            "test" => Some(SplitLabel::Test),
            _ => None,
        }
    }
}

/// Dataset index: version plus ordered (sequence id, split) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<(String, SplitLabel)>,
}

impl DatasetManifest {
    pub fn sequence_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }
}

/// Writes sequences under `root` and returns the manifest.
pub fn write_dataset(
    records: &[(String, SequenceRecord, SplitLabel)],
    root: &Path,
) -> Result<DatasetManifest, SynthError> {
    {
        let mut seen = std::collections::HashSet::new();
        for (id, _, _) in records {
            if !seen.insert(id.as_str()) {
                return Err(SynthError::DuplicateSequence(id.clone()));
            }
        }
    }
    std::fs::create_dir_all(root)?;
    let mut manifest_text = format!("version {DATASET_VERSION}\n");
    for (id, seq, split) in records {
        write_sequence(&root.join(id), seq)?;
        writeln!(manifest_text, "{id} {}", split.as_str()).expect("string write");
    }
    std::fs::write(root.join("manifest.txt"), manifest_text)?;
    Ok(DatasetManifest {
        version: DATASET_VERSION,
        entries: records
            .iter()
            .map(|(id, _, split)| (id.clone(), *split))
            .collect(),
    })
}

fn write_sequence(dir: &Path, seq: &SequenceRecord) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<PathBuf> = Vec::new();
    let push = |files: &mut Vec<PathBuf>, p: PathBuf| -> PathBuf {
        files.push(p.clone());
        p
    };

    std::fs::write(
        push(&mut files, dir.join("spec.txt")),
        spec_to_text(&seq.spec),
    )?;
    for f in &seq.frames {
        f.occluded_mask
            .save(&push(&mut files, dir.join(format!("frame_{:04}.omask.pgm", f.index))))?;
        f.complete_mask
            .save(&push(&mut files, dir.join(format!("frame_{:04}.cmask.pgm", f.index))))?;
        f.hand_mask
            .save(&push(&mut files, dir.join(format!("frame_{:04}.hmask.pgm", f.index))))?;
        f.depth
            .save(&push(&mut files, dir.join(format!("frame_{:04}.depth.bin", f.index))))?;
    }
    seq.object_mesh
        .save_ply(&push(&mut files, dir.join("object.ply")))?;
    seq.voxels
        .save(&push(&mut files, dir.join("object_voxels.bin")))?;
    seq.hand
        .mesh()
        .save_ply(&push(&mut files, dir.join("hand.ply")))?;
    seq.trajectory
        .save_tum(&push(&mut files, dir.join("traj_gt.txt")))?;

    let mut kp = String::from("frame,keypoint,u,v\n");
    for f in &seq.frames {
        for (k, p) in f.keypoints.iter().enumerate() {
            writeln!(kp, "{},{},{},{}", f.index, k, p.x, p.y).expect("string write");
        }
    }
    std::fs::write(push(&mut files, dir.join("keypoints.csv")), kp)?;

    let mut hk = String::from("keypoint,x,y,z\n");
    for (k, p) in seq.hand.keypoints().iter().enumerate() {
        writeln!(hk, "{},{},{},{}", k, p.x, p.y, p.z).expect("string write");
    }
    std::fs::write(push(&mut files, dir.join("hand_keypoints.csv")), hk)?;

    // Checksums over every file written above.
    let mut sums = String::new();
    for f in &files {
        let bytes = std::fs::read(f)?;
        let name = f.file_name().unwrap().to_string_lossy();
        writeln!(sums, "{:016x} {name}", fnv1a64(&bytes)).expect("string write");
    }
    std::fs::write(dir.join("checksums.txt"), sums)?;
    Ok(())
}

/// Reads the manifest and every listed sequence, verifying checksums.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<SequenceRecord>), SynthError> {
    let manifest_path = root.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| SynthError::MissingFile(manifest_path.display().to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let version: u32 = header
        .strip_prefix("version ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SynthError::Parse {
            file: "manifest.txt".into(),
            msg: format!("bad header {header:?}"),
        })?;
    if version != DATASET_VERSION {
        return Err(SynthError::VersionMismatch {
            got: version,
            expected: DATASET_VERSION,
        });
    }
    let mut entries = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap().to_string();
        let split = parts
            .next()
            .and_then(SplitLabel::parse)
            .ok_or_else(|| SynthError::Parse {
                file: "manifest.txt".into(),
                msg: format!("bad entry {line:?}"),
            })?;
        if entries.iter().any(|(e, _): &(String, _)| *e == id) {
            return Err(SynthError::DuplicateSequence(id));
        }
        entries.push((id, split));
    }

    let mut sequences = Vec::with_capacity(entries.len());
    for (id, _) in &entries {
        sequences.push(read_sequence(&root.join(id))?);
    }
    Ok((DatasetManifest { version, entries }, sequences))
}

fn read_sequence(dir: &Path) -> Result<SequenceRecord, SynthError> {
    verify_checksums(dir)?;
    let spec = spec_from_text(
        &std::fs::read_to_string(dir.join("spec.txt"))
            .map_err(|_| SynthError::MissingFile(dir.join("spec.txt").display().to_string()))?,
        &dir.join("spec.txt").display().to_string(),
    )?;
    let trajectory = Trajectory::load_tum(&dir.join("traj_gt.txt"))?;
    let voxels = VoxelGrid::load(&dir.join("object_voxels.bin"))?;
    let object_mesh = TriMesh::load_ply(&dir.join("object.ply"))?;
    let hand_mesh = TriMesh::load_ply(&dir.join("hand.ply"))?;

    // Keypoints per frame.
    let kp_path = dir.join("keypoints.csv");
    let kp_text = std::fs::read_to_string(&kp_path)
        .map_err(|_| SynthError::MissingFile(kp_path.display().to_string()))?;
    let mut keypoints: BTreeMap<usize, Vec<Pixel>> = BTreeMap::new();
    for (ln, line) in kp_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(SynthError::Parse {
                file: "keypoints.csv".into(),
                msg: format!("line {}: expected 4 fields", ln + 1),
            });
        }
        let frame: usize = fields[0].parse().map_err(|_| SynthError::Parse {
            file: "keypoints.csv".into(),
            msg: format!("line {}: bad frame", ln + 1),
        })?;
        let u: f64 = fields[2].parse().unwrap_or(f64::NAN);
        let v: f64 = fields[3].parse().unwrap_or(f64::NAN);
        keypoints.entry(frame).or_default().push(Pixel::new(u, v));
    }

    // The hand's 3D keypoints live in their own CSV next to the mesh.
    let hk_path = dir.join("hand_keypoints.csv");
    let hand = if hk_path.exists() {
        let text = std::fs::read_to_string(&hk_path)?;
        let mut pts = Vec::new();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(SynthError::Parse {
                    file: "hand_keypoints.csv".into(),
                    msg: "expected 4 fields".into(),
                });
            }
            pts.push(crate::geometry::Vec3::new(
                f[1].parse().unwrap_or(f64::NAN),
                f[2].parse().unwrap_or(f64::NAN),
                f[3].parse().unwrap_or(f64::NAN),
            ));
        }
        HandMesh::new(hand_mesh, pts)?
    } else {
        return Err(SynthError::MissingFile(hk_path.display().to_string()));
    };

    let mut frames = Vec::new();
    for &(index, camera) in trajectory.entries() {
        let idx = index as usize;
        let occluded_mask = MaskImage::load(&dir.join(format!("frame_{idx:04}.omask.pgm")))?;
        let complete_mask = MaskImage::load(&dir.join(format!("frame_{idx:04}.cmask.pgm")))?;
        let hand_mask = MaskImage::load(&dir.join(format!("frame_{idx:04}.hmask.pgm")))?;
        let depth = DepthMap::load(&dir.join(format!("frame_{idx:04}.depth.bin")))?;
        let kps = keypoints.get(&idx).cloned().unwrap_or_default();
        if kps.len() != 21 {
            return Err(SynthError::Parse {
                file: "keypoints.csv".into(),
                msg: format!("frame {idx}: expected 21 keypoints, got {}", kps.len()),
            });
        }
        frames.push(FrameRecord {
            index: idx,
            camera,
            occluded_mask,
            complete_mask,
            hand_mask,
            depth,
            keypoints: kps,
        });
    }
    Ok(SequenceRecord {
        spec,
        frames,
        voxels,
        object_mesh,
        hand,
        trajectory,
    })
}

fn verify_checksums(dir: &Path) -> Result<(), SynthError> {
    let path = dir.join("checksums.txt");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| SynthError::MissingFile(path.display().to_string()))?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (sum_hex, name) = line.split_once(' ').ok_or_else(|| SynthError::Parse {
            file: "checksums.txt".into(),
            msg: format!("bad line {line:?}"),
        })?;
        let expected = u64::from_str_radix(sum_hex, 16).map_err(|_| SynthError::Parse {
            file: "checksums.txt".into(),
            msg: format!("bad checksum {sum_hex:?}"),
        })?;
        let file = dir.join(name);
        let bytes =
            std::fs::read(&file).map_err(|_| SynthError::MissingFile(file.display().to_string()))?;
        if fnv1a64(&bytes) != expected {
            return Err(SynthError::ChecksumMismatch(file.display().to_string()));
        }
    }
    Ok(())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn spec_to_text(spec: &SceneSpec) -> String {
    format!(
        "seed={}\ncomplexity={}\ngrasp_offset={}\nframe_count={}\nimage_size={}\nvoxel_resolution={}\norbit_radius={}\norbit_elevation_deg={}\norbit_sweep_deg={}\norbit_jitter_deg={}\n",
        spec.seed,
        spec.complexity,
        spec.grasp_offset,
        spec.frame_count,
        spec.image_size,
        spec.voxel_resolution,
        spec.orbit.radius,
        spec.orbit.elevation_deg,
        spec.orbit.sweep_deg,
        spec.orbit.jitter_deg,
    )
}

fn spec_from_text(text: &str, file: &str) -> Result<SceneSpec, SynthError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SynthError::Parse {
            file: file.into(),
            msg: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String, SynthError> {
        map.get(k).ok_or_else(|| SynthError::Parse {
            file: file.into(),
            msg: format!("missing key {k}"),
        })
    };
    let parse_f = |k: &str| -> Result<f64, SynthError> {
        get(k)?.parse().map_err(|_| SynthError::Parse {
            file: file.into(),
            msg: format!("bad float for {k}"),
        })
    };
    let parse_u = |k: &str| -> Result<u64, SynthError> {
        get(k)?.parse().map_err(|_| SynthError::Parse {
            file: file.into(),
            msg: format!("bad integer for {k}"),
        })
    };
    Ok(SceneSpec {
        seed: parse_u("seed")?,
        complexity: parse_u("complexity")? as usize,
        grasp_offset: parse_f("grasp_offset")?,
        frame_count: parse_u("frame_count")? as usize,
        image_size: parse_u("image_size")? as usize,
        voxel_resolution: parse_u("voxel_resolution")? as usize,
        orbit: OrbitParams {
            radius: parse_f("orbit_radius")?,
            elevation_deg: parse_f("orbit_elevation_deg")?,
            sweep_deg: parse_f("orbit_sweep_deg")?,
            jitter_deg: parse_f("orbit_jitter_deg")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, SceneSpec};

    fn small_records(n: usize) -> Vec<(String, SequenceRecord, SplitLabel)> {
        (0..n)
            .map(|i| {
                let spec = SceneSpec {
                    seed: 40 + i as u64,
                    frame_count: 3,
                    ..Default::default()
                };
                (
                    format!("seq_{i:04}"),
                    generate_sequence(&spec).unwrap(),
                    if i % 3 == 2 { SplitLabel::Test } else { SplitLabel::Train },
                )
            })
            .collect()
    }

    #[test]
    fn roundtrip_preserves_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let records = small_records(3);
        let manifest = write_dataset(&records, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 3);

        let (manifest2, sequences) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, manifest2);
        for ((_, original, _), loaded) in records.iter().zip(&sequences) {
            assert_eq!(original.spec, loaded.spec);
            assert_eq!(original.voxels, loaded.voxels);
            assert_eq!(original.trajectory, loaded.trajectory);
            assert_eq!(original.frames.len(), loaded.frames.len());
            for (a, b) in original.frames.iter().zip(&loaded.frames) {
                assert_eq!(a.occluded_mask, b.occluded_mask);
                assert_eq!(a.complete_mask, b.complete_mask);
                assert_eq!(a.hand_mask, b.hand_mask);
                assert_eq!(a.depth, b.depth);
                for (ka, kb) in a.keypoints.iter().zip(&b.keypoints) {
                    assert_eq!(ka, kb);
                }
            }
            assert_eq!(
                original.object_mesh.vertices().len(),
                loaded.object_mesh.vertices().len()
            );
            assert_eq!(original.hand.keypoints(), loaded.hand.keypoints());
        }
    }

    #[test]
    fn corrupted_file_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let records = small_records(1);
        write_dataset(&records, dir.path()).unwrap();
        // Flip a byte in a depth file.
        let victim = dir.path().join("seq_0000/frame_0000.depth.bin");
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&victim, bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        match err {
            SynthError::ChecksumMismatch(name) => {
                assert!(name.contains("frame_0000.depth.bin"), "{name}")
            }
            other => panic!("expected checksum mismatch, got {other}"),
        }
    }

    #[test]
    fn manifest_lists_written_sequences_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let records = small_records(2);
        let manifest = write_dataset(&records, dir.path()).unwrap();
        let ids: Vec<&str> = manifest.sequence_ids().collect();
        assert_eq!(ids, vec!["seq_0000", "seq_0001"]);

        let mut dup = small_records(1);
        dup.push(dup[0].clone());
        assert!(matches!(
            write_dataset(&dup, dir.path()),
            Err(SynthError::DuplicateSequence(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small_records(1), dir.path()).unwrap();
        let manifest = dir.path().join("manifest.txt");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("version 1", "version 9")).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(SynthError::VersionMismatch { got: 9, .. })
        ));
    }
}
