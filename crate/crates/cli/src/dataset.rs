//! Scene sets on disk: `{name}_gt.pfm`, `{name}_gray.pfm` and `manifest.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gcspn_core::grid::{read_pfm, write_pfm, CameraIntrinsics, DepthGrid};
use gcspn_core::learning::Sample;
use gcspn_core::par;
use gcspn_core::rng::Rng;
use gcspn_core::synth::{render_scene, sample_sparse, SceneSpec};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "name,split,height,width,fp,fq,cp,cq";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub name: String,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub intr: CameraIntrinsics,
}

impl SceneEntry {
    pub fn gt_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_gt.pfm", self.name))
    }

    pub fn gray_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_gray.pfm", self.name))
    }
}

/// Seed of the `index`-th scene's geometry.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed, index as u64).next_u64()
}

/// Seed of the `index`-th scene's sparse sample draw. Draws for different
/// counts are nested: the first `n` picks do not depend on the total.
pub fn sparse_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed ^ 0x5350_4152_5345, index as u64).next_u64()
}

pub fn entry_names(cfg: &RunConfig) -> Vec<(String, Split)> {
    let train = (0..cfg.n_train).map(|i| (format!("train_{i:03}"), Split::Train));
    let test = (0..cfg.n_test).map(|i| (format!("test_{i:03}"), Split::Test));
    train.chain(test).collect()
}

/// Render every scene and write the PFM pairs plus the manifest.
pub fn generate(cfg: &RunConfig) -> Result<Vec<SceneEntry>> {
    cfg.validate()?;
    let dir = &cfg.scene_dir;
    std::fs::create_dir_all(dir).map_err(|e| gcspn_core::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let intr = CameraIntrinsics::centered(cfg.height, cfg.width, cfg.focal_length());
    let names = entry_names(cfg);
    let entries: Vec<Result<SceneEntry>> = par::map_range(names.len(), |i| {
        let (name, split) = names[i].clone();
        let spec = SceneSpec::random(scene_seed(cfg.seed, i), cfg.height, cfg.width, intr, cfg.near, cfg.far)?;
        let (depth, gray) = render_scene(&spec)?;
        let entry = SceneEntry {
            name,
            split,
            height: cfg.height,
            width: cfg.width,
            intr,
        };
        write_pfm(&depth, entry.gt_path(dir))?;
        write_pfm(&gray, entry.gray_path(dir))?;
        Ok(entry)
    });
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[SceneEntry]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for e in entries {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            e.name,
            e.split.name(),
            e.height,
            e.width,
            e.intr.fp,
            e.intr.fq,
            e.intr.cp,
            e.intr.cq
        )
        .unwrap();
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| gcspn_core::Error::Io { path, source: e }.into())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<SceneEntry>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::NotFound(path.clone())
        } else {
            gcspn_core::Error::Io {
                path: path.clone(),
                source: e,
            }
            .into()
        }
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CliError::Config(format!("{}: bad manifest header", path.display())));
    }
    let bad = |no: usize, what: &str| CliError::Config(format!("{}: line {}: {what}", path.display(), no + 2));
    let mut out = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(no, "expected 8 fields"));
        }
        let split = match f[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            _ => return Err(bad(no, "split must be train or test")),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(no, "bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(no, "bad size"));
        let intr = CameraIntrinsics::new(num(f[4])?, num(f[5])?, num(f[6])?, num(f[7])?)?;
        out.push(SceneEntry {
            name: f[0].to_string(),
            split,
            height: int(f[2])?,
            width: int(f[3])?,
            intr,
        });
    }
    Ok(out)
}

pub fn read_depth(path: &Path) -> Result<DepthGrid> {
    if !path.exists() {
        return Err(CliError::NotFound(path.to_path_buf()));
    }
    Ok(read_pfm(path)?.channel_plane(0)?)
}

/// Ground truth, guidance and a fresh sparse draw for every scene of `split`.
pub fn load_samples(cfg: &RunConfig, split: Split, sparsity: usize) -> Result<Vec<Sample>> {
    let entries = read_manifest(&cfg.scene_dir)?;
    let picked: Vec<(usize, SceneEntry)> = entries
        .into_iter()
        .enumerate()
        .filter(|(_, e)| e.split == split)
        .collect();
    let loaded: Vec<Result<Sample>> = par::map_slice(&picked, |(index, e)| {
        let gt = read_depth(&e.gt_path(&cfg.scene_dir))?;
        let gray = read_depth(&e.gray_path(&cfg.scene_dir))?;
        if gt.height() != e.height || gt.width() != e.width {
            return Err(CliError::Config(format!(
                "scene {} does not match its manifest size",
                e.name
            )));
        }
        let sparse = sample_sparse(&gt, sparsity, sparse_seed(cfg.seed, *index))?;
        Ok(Sample::new(e.name.clone(), gt, Some(gray), sparse, e.intr)?)
    });
    loaded.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            scene_dir: dir.to_path_buf(),
            n_train: 2,
            n_test: 1,
            height: 8,
            width: 12,
            sparsity: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let written = generate(&tiny(dir.path())).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), written);
        assert_eq!(written[2].name, "test_000");
        assert_eq!(written[0].intr, CameraIntrinsics::centered(8, 12, 0.9 * 12.0));
    }

    #[test]
    fn bad_manifest_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST), "name,split\n").unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap_err().kind(), "config");
        let body = format!("{MANIFEST_HEADER}\na,valid,8,8,1,1,0,0\n");
        std::fs::write(dir.path().join(MANIFEST), body).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap_err().kind(), "config");
    }

    #[test]
    fn sparse_draws_are_nested() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        generate(&cfg).unwrap();
        let few = load_samples(&cfg, Split::Train, 5).unwrap();
        let many = load_samples(&cfg, Split::Train, 20).unwrap();
        for (a, b) in few.iter().zip(&many) {
            for (x, y) in a.sparse.values().iter().zip(b.sparse.values()) {
                assert!(*x == 0.0 || x == y);
            }
            assert_eq!(a.sparse.valid_count(), 5);
        }
    }

    #[test]
    fn scene_seeds_differ_by_index_and_run() {
        assert_ne!(scene_seed(0, 0), scene_seed(0, 1));
        assert_ne!(scene_seed(0, 0), scene_seed(1, 0));
        assert_ne!(scene_seed(0, 3), sparse_seed(0, 3));
    }
}
