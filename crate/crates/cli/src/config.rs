//! Run configuration: flat `key = value` text, then environment, then flags.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | master seed (`GCSPN_SEED` overrides) |
//! | `scene_dir` | `scenes` | generated scenes and `manifest.csv` |
//! | `out_dir` | `out` | checkpoint, logs, predictions, CSV reports |
//! | `checkpoint` | `<out_dir>/model.gcsp` | parameter file |
//! | `pred_dir` | `<out_dir>/pred` | predictions written by `infer`, read by `eval` |
//! | `n_train`, `n_test` | 20, 5 | scenes per split |
//! | `height`, `width` | 64, 64 | image size |
//! | `near`, `far` | 1, 8 | depth range in meters |
//! | `focal` | `0.9 * width` | focal length in pixels |
//! | `sparsity` | 500 | sparse samples per scene |
//! | `steps`, `k` | 3, 8 | propagation steps and neighbours |
//! | `patch_h`, `patch_w` | 4, 4 | patch size |
//! | `scale` | 10 | meters per unit inside the MLPs |
//! | `reimpose_sparse` | false | overwrite observed pixels after each step |
//! | `attention`, `geometry`, `dynamic` | true | ablation toggles |
//! | `epochs`, `lr`, `batch_size` | 60, 0.003, 1 | training |
//! | `schedule` | `cosine` | `cosine` or `constant` |
//! | `augment` | false | fresh sparse draw and random left-right mirror per scene per epoch |
//! | `aux_weight`, `loss` | 0.1, `l1` | objective (`l1`, `smooth-l1`, `l2`) |
//! | `gradcheck_size`, `gradcheck_steps` | 8, 2 | gradient check scene |
//! | `gradcheck_patch`, `gradcheck_k`, `gradcheck_samples` | 2, 4, 16 | |
//! | `ablate_steps`, `ablate_k`, `ablate_sparsity` | `1,2,3,4,5,6`, `4,8,16`, `200,400,500,600,800` | sweep axes |

use std::path::{Path, PathBuf};

use gcspn_core::learning::{LossKind, LrSchedule, TrainConfig};
use gcspn_core::propagation::{Aggregation, PropagationConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub pred_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub near: f64,
    pub far: f64,
    pub focal: Option<f64>,
    pub sparsity: usize,
    pub prop: PropagationConfig,
    pub train: TrainConfig,
    pub gradcheck_size: usize,
    pub gradcheck_steps: usize,
    pub gradcheck_patch: usize,
    pub gradcheck_k: usize,
    pub gradcheck_samples: usize,
    pub ablate_steps: Vec<usize>,
    pub ablate_k: Vec<usize>,
    pub ablate_sparsity: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene_dir: PathBuf::from("scenes"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            pred_dir: None,
            n_train: 20,
            n_test: 5,
            height: 64,
            width: 64,
            near: 1.0,
            far: 8.0,
            focal: None,
            sparsity: 500,
            prop: PropagationConfig::default(),
            train: TrainConfig::default(),
            gradcheck_size: 8,
            gradcheck_steps: 2,
            gradcheck_patch: 2,
            gradcheck_k: 4,
            gradcheck_samples: 16,
            ablate_steps: (1..=6).collect(),
            ablate_k: vec![4, 8, 16],
            ablate_sparsity: vec![200, 400, 500, 600, 800],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::NotFound(path.to_path_buf())
            } else {
                CliError::Config(format!("{}: {e}", path.display()))
            }
        })?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "scene_dir" => self.scene_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "pred_dir" => self.pred_dir = Some(PathBuf::from(value)),
            "n_train" => self.n_train = parse(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "near" => self.near = parse(key, value)?,
            "far" => self.far = parse(key, value)?,
            "focal" => self.focal = Some(parse(key, value)?),
            "sparsity" => self.sparsity = parse(key, value)?,
            "steps" => self.prop.steps = parse(key, value)?,
            "k" => self.prop.k = parse(key, value)?,
            "patch_h" => self.prop.patch_h = parse(key, value)?,
            "patch_w" => self.prop.patch_w = parse(key, value)?,
            "scale" => self.prop.scale = parse(key, value)?,
            "reimpose_sparse" => self.prop.reimpose_sparse = parse_bool(key, value)?,
            "attention" => {
                self.prop.aggregation = if parse_bool(key, value)? {
                    Aggregation::Attention
                } else {
                    Aggregation::Mean
                }
            }
            "geometry" => self.prop.geometry = parse_bool(key, value)?,
            "dynamic" => self.prop.dynamic = parse_bool(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "augment" => self.train.augment = parse_bool(key, value)?,
            "schedule" => {
                self.train.schedule = LrSchedule::parse(value).map_err(|e| CliError::Config(e.to_string()))?
            }
            "aux_weight" => self.train.aux_weight = parse(key, value)?,
            "loss" => self.train.loss = LossKind::parse(value).map_err(|e| CliError::Config(e.to_string()))?,
            "gradcheck_size" => self.gradcheck_size = parse(key, value)?,
            "gradcheck_steps" => self.gradcheck_steps = parse(key, value)?,
            "gradcheck_patch" => self.gradcheck_patch = parse(key, value)?,
            "gradcheck_k" => self.gradcheck_k = parse(key, value)?,
            "gradcheck_samples" => self.gradcheck_samples = parse(key, value)?,
            "ablate_steps" => self.ablate_steps = parse_list(key, value)?,
            "ablate_k" => self.ablate_k = parse_list(key, value)?,
            "ablate_sparsity" => self.ablate_sparsity = parse_list(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.gcsp"))
    }

    pub fn pred_path(&self) -> PathBuf {
        self.pred_dir.clone().unwrap_or_else(|| self.out_dir.join("pred"))
    }

    pub fn focal_length(&self) -> f64 {
        self.focal.unwrap_or(0.9 * self.width as f64)
    }

    /// Range checks shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.near > 0.0) || !(self.far > self.near) || !self.far.is_finite() {
            return bad(format!(
                "depth range needs 0 < near < far, got near={} far={}",
                self.near, self.far
            ));
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if let Some(f) = self.focal {
            if !(f > 0.0) || !f.is_finite() {
                return bad(format!("focal must be positive, got {f}"));
            }
        }
        self.prop.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.gradcheck_steps == 0 || self.gradcheck_patch == 0 || self.gradcheck_k == 0 {
            return bad("gradcheck steps, patch and k must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text() {
        let cfg = RunConfig::from_text(
            "# comment\nseed = 7\n\nsteps=2\nattention = false\nloss = smooth-l1\nablate_k = 4, 8\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.prop.steps, 2);
        assert_eq!(cfg.prop.aggregation, Aggregation::Mean);
        assert_eq!(cfg.train.loss, LossKind::SmoothL1);
        assert_eq!(cfg.ablate_k, vec![4, 8]);
        assert_eq!(cfg.sparsity, 500);
    }

    #[test]
    fn rejects_garbage() {
        assert!(RunConfig::from_text("nonsense").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("steps = three").is_err());
        let cfg = RunConfig::from_text("near = 5\nfar = 2").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn derived_paths() {
        let mut cfg = RunConfig::default();
        cfg.set_pair("out_dir=/tmp/x").unwrap();
        assert_eq!(cfg.checkpoint_path(), PathBuf::from("/tmp/x/model.gcsp"));
        assert_eq!(cfg.pred_path(), PathBuf::from("/tmp/x/pred"));
        assert_eq!(cfg.focal_length(), 57.6);
    }
}
