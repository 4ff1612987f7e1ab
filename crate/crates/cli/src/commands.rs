//! One function per subcommand. Each returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::Path;

use gcspn_core::grid::{write_pfm, write_pgm16, CameraIntrinsics};
use gcspn_core::learning::{
    gradcheck, predict, train, GradCheckOptions, GradCheckReport, LossReport, Model, ParamStore, Sample,
};
use gcspn_core::metrics::{evaluate, mean_metrics, MetricsRecord, METRICS_HEADER};
use gcspn_core::par;
use gcspn_core::propagation::{Aggregation, BackwardHook, PropagationConfig};
use gcspn_core::rng::Rng;
use gcspn_core::synth::{render_scene, sample_sparse, SceneSpec};

use crate::config::RunConfig;
use crate::dataset::{self, read_depth, read_manifest, Split};
use crate::error::{CliError, Result};

pub const ABLATE_HEADER: &str = "group,steps,k,sparsity,attention,geometry,dynamic,rmse,mae,irmse,imae,rel,d1,d2,d3";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| {
        gcspn_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| {
        gcspn_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<String> {
    let entries = dataset::generate(cfg)?;
    Ok(format!(
        "wrote {} scenes ({} PFM files) and {} to {}",
        entries.len(),
        2 * entries.len(),
        dataset::MANIFEST,
        cfg.scene_dir.display()
    ))
}

pub fn loss_log_csv(log: &[LossReport]) -> String {
    let steps = log.first().map_or(0, |r| r.auxiliary.len());
    let mut out = String::from("epoch,total,main");
    for s in 1..=steps {
        write!(out, ",aux_{s}").unwrap();
    }
    out.push_str(",valid_count\n");
    for (e, r) in log.iter().enumerate() {
        write!(out, "{},{},{}", e + 1, r.total, r.main).unwrap();
        for a in &r.auxiliary {
            write!(out, ",{a}").unwrap();
        }
        writeln!(out, ",{}", r.valid_count).unwrap();
    }
    out
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let samples = dataset::load_samples(cfg, Split::Train, cfg.sparsity)?;
    if samples.is_empty() {
        return Err(CliError::Config("manifest has no training scenes".into()));
    }
    let outcome = train(&samples, &cfg.train, &cfg.prop)?;
    mkdir(&cfg.out_dir)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        mkdir(parent)?;
    }
    outcome.store.save(&ckpt)?;
    write_text(&cfg.out_dir.join("loss_log.csv"), &loss_log_csv(&outcome.log))?;
    let first = outcome.log.first().map_or(f64::NAN, |r| r.total);
    let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
    Ok(format!(
        "trained {} epochs on {} scenes: loss {first:.5} -> {last:.5}; checkpoint {}",
        outcome.log.len(),
        samples.len(),
        ckpt.display()
    ))
}

pub fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(CliError::NotFound(path));
    }
    let model = Model::from_store(&ParamStore::load(&path)?)?;
    model.check_config(&cfg.prop)?;
    Ok(model)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let samples = dataset::load_samples(cfg, Split::Test, cfg.sparsity)?;
    let dir = cfg.pred_path();
    mkdir(&dir)?;
    let written: Vec<Result<()>> = par::map_slice(&samples, |s| {
        let out = predict(&model, s, &cfg.prop)?;
        write_pfm(&out.depth, dir.join(format!("{}_pred.pfm", s.name)))?;
        write_pgm16(&out.depth, dir.join(format!("{}_pred.pgm", s.name)), cfg.far)?;
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(format!("wrote {} predictions to {}", samples.len(), dir.display()))
}

/// Per-scene rows followed by a `mean` row.
pub fn metrics_csv(rows: &[(String, MetricsRecord)]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for (name, m) in rows {
        writeln!(out, "{}", m.csv_row(name)).unwrap();
    }
    let all: Vec<MetricsRecord> = rows.iter().map(|(_, m)| *m).collect();
    if let Some(mean) = mean_metrics(&all) {
        writeln!(out, "{}", mean.csv_row("mean")).unwrap();
    }
    out
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let entries: Vec<_> = read_manifest(&cfg.scene_dir)?
        .into_iter()
        .filter(|e| e.split == Split::Test)
        .collect();
    let dir = cfg.pred_path();
    for e in &entries {
        let path = dir.join(format!("{}_pred.pfm", e.name));
        if !path.exists() {
            return Err(CliError::MissingPrediction {
                scene: e.name.clone(),
                path,
            });
        }
    }
    let rows: Vec<Result<(String, MetricsRecord)>> = par::map_slice(&entries, |e| {
        let gt = read_depth(&e.gt_path(&cfg.scene_dir))?;
        let pred = read_depth(&dir.join(format!("{}_pred.pfm", e.name)))?;
        Ok((e.name.clone(), evaluate(&pred, &gt)?))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let csv = metrics_csv(&rows);
    write_text(&cfg.out_dir.join("metrics.csv"), &csv)?;
    Ok(csv.trim_end().to_string())
}

/// The seeded scene used by `gradcheck`.
pub fn gradcheck_sample(cfg: &RunConfig) -> Result<Sample> {
    let n = cfg.gradcheck_size;
    let intr = CameraIntrinsics::centered(n, n, 0.9 * n as f64);
    let seed = Rng::derive(cfg.seed, 0x6772_6164).next_u64();
    let spec = SceneSpec::random(seed, n, n, intr, cfg.near, cfg.far)?;
    let (gt, gray) = render_scene(&spec)?;
    let sparse = sample_sparse(&gt, cfg.gradcheck_samples, seed ^ 1)?;
    Ok(Sample::new("gradcheck", gt, Some(gray), sparse, intr)?)
}

pub fn gradcheck_config(cfg: &RunConfig) -> PropagationConfig {
    PropagationConfig {
        steps: cfg.gradcheck_steps,
        k: cfg.gradcheck_k,
        patch_h: cfg.gradcheck_patch,
        patch_w: cfg.gradcheck_patch,
        ..cfg.prop.clone()
    }
}

pub fn run_gradcheck(cfg: &RunConfig, hook: BackwardHook) -> Result<GradCheckReport> {
    cfg.validate()?;
    let sample = gradcheck_sample(cfg)?;
    let prop = gradcheck_config(cfg);
    let model = Model::random(cfg.seed, prop.patch_h, prop.patch_w, prop.scale)?;
    let options = GradCheckOptions {
        hook,
        ..GradCheckOptions::default()
    };
    Ok(gradcheck(&model, &sample, &prop, cfg.train.loss_spec(), options)?)
}

/// Prints the report; a failing report is returned as an error after it.
pub fn cmd_gradcheck(cfg: &RunConfig, hook: BackwardHook) -> Result<(String, bool)> {
    let report = run_gradcheck(cfg, hook)?;
    Ok((report.to_string(), report.passed()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group: &'static str,
    pub config: PropagationConfig,
    pub sparsity: usize,
    pub metrics: MetricsRecord,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.group,
            c.steps,
            c.k,
            self.sparsity,
            c.aggregation == Aggregation::Attention,
            c.geometry,
            c.dynamic,
            self.metrics.csv_fields()
        )
    }
}

/// Every ablation cell as (group, propagation config, sparsity).
pub fn ablation_cells(cfg: &RunConfig) -> Vec<(&'static str, PropagationConfig, usize)> {
    let base = &cfg.prop;
    let mut cells = Vec::new();
    for &steps in &cfg.ablate_steps {
        for &k in &cfg.ablate_k {
            cells.push((
                "steps_k",
                PropagationConfig {
                    steps,
                    k,
                    ..base.clone()
                },
                cfg.sparsity,
            ));
        }
    }
    for &n in &cfg.ablate_sparsity {
        cells.push(("sparsity", base.clone(), n));
    }
    let full = PropagationConfig {
        aggregation: Aggregation::Attention,
        geometry: true,
        dynamic: true,
        ..base.clone()
    };
    cells.push(("full", full.clone(), cfg.sparsity));
    cells.push((
        "no_attention",
        PropagationConfig {
            aggregation: Aggregation::Mean,
            ..full.clone()
        },
        cfg.sparsity,
    ));
    cells.push((
        "no_geometry",
        PropagationConfig {
            geometry: false,
            ..full.clone()
        },
        cfg.sparsity,
    ));
    cells.push((
        "static_graph",
        PropagationConfig { dynamic: false, ..full },
        cfg.sparsity,
    ));
    cells
}

pub fn mean_test_metrics(model: &Model, samples: &[Sample], prop: &PropagationConfig) -> Result<MetricsRecord> {
    let rows: Vec<Result<MetricsRecord>> = par::map_slice(samples, |s| {
        let out = predict(model, s, prop)?;
        Ok(evaluate(&out.depth, &s.gt)?)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    mean_metrics(&rows).ok_or_else(|| CliError::Config("no test scenes".into()))
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let mut by_sparsity: Vec<(usize, Vec<Sample>)> = Vec::new();
    let mut out = format!("{ABLATE_HEADER}\n");
    for (group, prop, n) in ablation_cells(cfg) {
        if !by_sparsity.iter().any(|(m, _)| *m == n) {
            by_sparsity.push((n, dataset::load_samples(cfg, Split::Test, n)?));
        }
        let samples = &by_sparsity.iter().find(|(m, _)| *m == n).unwrap().1;
        let row = AblationRow {
            group,
            sparsity: n,
            metrics: mean_test_metrics(&model, samples, &prop)?,
            config: prop,
        };
        writeln!(out, "{}", row.csv_row()).unwrap();
    }
    write_text(&cfg.out_dir.join("ablate.csv"), &out)?;
    Ok(out.trim_end().to_string())
}
