//! Flat key=value run configuration.
//!
//! One table of known keys with defaults covers every tunable in the
//! pipeline; unknown keys are rejected by name, values are plain text, and
//! the fully resolved table is echoed into each run's output directory so
//! every artifact records the configuration that produced it.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {value:?} ({expected})")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key: {0}")]
    MissingKey(String),
    #[error("malformed line {line} in {file}: expected key=value")]
    BadLine { file: String, line: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// (key, default, description) rows of the configuration table.
pub const KNOWN_KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for the subcommand"),
    ("threads", "0", "worker threads; 0 = auto (execution is deterministic)"),
    ("paths.data", "", "dataset directory"),
    ("paths.checkpoint", "", "model checkpoint file"),
    ("paths.mesh", "", "object mesh PLY consumed by pose/align/eval"),
    ("paths.trajectory", "", "estimated trajectory (TUM) consumed by align/eval"),
    ("paths.gt_mesh", "", "ground-truth mesh PLY for eval"),
    ("paths.gt_trajectory", "", "ground-truth trajectory (TUM) for eval"),
    ("paths.sequence", "", "sequence id within the dataset"),
    ("data.sequences", "16", "sequences to generate"),
    ("data.train_fraction", "0.8", "fraction of sequences labeled train"),
    ("data.val_fraction", "0.1", "fraction labeled val (rest is test)"),
    ("data.complexity_min", "1", "minimum primitives per object"),
    ("data.complexity_max", "5", "maximum primitives per object"),
    ("data.frame_count", "12", "frames per sequence"),
    ("data.image_size", "64", "square image size, pixels"),
    ("data.voxel_resolution", "16", "voxel grid resolution per axis"),
    ("data.grasp_offset", "0", "extra palm standoff, meters"),
    ("data.orbit_radius", "1.25", "camera orbit radius lower bound, meters"),
    ("data.orbit_elevation_deg", "30", "camera elevation, degrees"),
    ("data.orbit_sweep_deg", "40", "azimuth sweep across the clip, degrees"),
    ("data.orbit_jitter_deg", "0.5", "per-frame angular jitter, degrees"),
    ("model.geo_blocks", "4", "geometry-branch transformer blocks"),
    ("model.mask_blocks", "4", "mask-branch transformer blocks"),
    ("model.heads", "4", "attention heads"),
    ("model.d", "64", "token channel width"),
    ("model.g", "8", "conditioning patch grid"),
    ("model.r", "16", "geometry latent resolution"),
    ("model.m", "32", "mask latent resolution"),
    ("model.n_min", "2", "minimum conditioning views per step"),
    ("model.n_max", "6", "maximum conditioning views per step"),
    ("model.geo_patch", "4", "geometry latent patch edge"),
    ("model.mask_patch", "4", "mask latent patch edge"),
    ("model.ff_mult", "2", "feed-forward width multiplier"),
    ("train.epochs", "30", "training epochs"),
    ("train.learning_rate", "0.003", "optimizer learning rate"),
    ("train.beta", "1.0", "3D branch weight in the joint loss"),
    ("sample.steps", "25", "Euler sampling steps"),
    ("sample.threshold", "0.5", "occupancy binarization threshold"),
    ("pose.n_refs", "30", "reference views"),
    ("pose.rounds", "3", "match/PnP/refine rounds"),
    ("pose.ransac_iterations", "200", "RANSAC hypotheses"),
    ("pose.sample_size", "6", "RANSAC minimal sample"),
    ("pose.inlier_threshold_px", "3.0", "RANSAC inlier threshold, pixels"),
    ("pose.lambda_proj", "10.0", "projection term weight"),
    ("pose.lambda_smooth", "3.0", "translation smoothness weight"),
    ("pose.refine_iterations", "15", "Gauss-Newton iterations per round"),
    ("pose.provider_rot_noise_deg", "5.0", "synthetic provider rotation noise"),
    ("pose.provider_center_noise_m", "0.01", "synthetic provider center noise"),
    ("pose.matcher_outlier_fraction", "0.3", "synthetic matcher outlier rate"),
    ("pose.matcher_noise_px", "1.0", "synthetic matcher pixel noise"),
    ("pose.matcher_samples", "800", "surface samples per matcher call"),
    ("align.lambda_contact", "200.0", "contact term weight"),
    ("align.lambda_kpoints", "20.0", "reprojected keypoint term weight"),
    ("align.lambda_vsmooth", "20.0", "temporal smoothness weight"),
    ("align.iterations", "400", "descent iterations"),
    ("align.contact_range_m", "0.02", "contact ray cap, meters"),
    ("eval.surface_samples", "10000", "surface samples per mesh"),
    ("eval.f5_tau", "0.005", "F-score threshold, meters"),
    ("eval.f10_tau", "0.010", "F-score threshold, meters"),
    ("eval.rpe_delta", "1", "RPE frame offset"),
];

/// Resolved configuration: defaults overlaid with file and CLI overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KNOWN_KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Loads defaults overlaid with a key=value file ('#' starts a comment).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    file: path.display().to_string(),
                    line: lineno + 1,
                });
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Sets a known key; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !self.values.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from the table"))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            expected: "unsigned integer",
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            expected: "unsigned integer",
        })
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            expected: "real number",
        })
    }

    /// Non-empty path-valued key.
    pub fn require_path(&self, key: &str) -> Result<std::path::PathBuf, ConfigError> {
        let v = self.get(key);
        if v.is_empty() {
            return Err(ConfigError::MissingKey(key.into()));
        }
        Ok(std::path::PathBuf::from(v))
    }

    /// Serializes the full resolved table, one key=value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Echoes the resolved configuration into a run directory.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), ConfigError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config_resolved.txt"), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_known_key() {
        let cfg = RunConfig::default();
        for (k, v, _) in KNOWN_KEYS {
            assert_eq!(cfg.get(k), *v);
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("train.epoch", "5").unwrap_err();
        assert!(err.to_string().contains("train.epoch"));
    }

    #[test]
    fn file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\ntrain.epochs = 7\nseed=99\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.get_usize("train.epochs").unwrap(), 7);
        assert_eq!(cfg.get_u64("seed").unwrap(), 99);
        assert_eq!(cfg.get("model.d"), "64");
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut cfg = RunConfig::default();
        cfg.set("train.epochs", "lots").unwrap();
        let err = cfg.get_usize("train.epochs").unwrap_err();
        assert!(err.to_string().contains("train.epochs"));
    }

    #[test]
    fn resolved_echo_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.set("model.d", "16").unwrap();
        cfg.write_resolved(dir.path()).unwrap();
        let echoed = RunConfig::load(&dir.path().join("config_resolved.txt")).unwrap();
        assert_eq!(echoed.get("model.d"), "16");
        for (k, _, _) in KNOWN_KEYS {
            assert_eq!(echoed.get(k), cfg.get(k), "{k} echoed");
        }
    }
}
