//! Shared pieces of the acceptance suite: the reference scene set, a mean
//! test RMSE helper and uncaptured one-line criterion reports.

use std::io::Write;
use std::path::Path;

use gcspn_cli::commands::mean_test_metrics;
use gcspn_cli::dataset::{self, Split};
use gcspn_cli::{Result, RunConfig};
use gcspn_core::learning::{Model, Sample};
use gcspn_core::propagation::PropagationConfig;

/// Sparse samples per scene in the reference set.
pub const REFERENCE_SPARSITY: usize = 300;

/// 20 train and 5 test scenes of 64×64 under `dir`, with default training
/// and propagation settings.
pub fn reference_config(dir: &Path) -> RunConfig {
    RunConfig {
        scene_dir: dir.join("scenes"),
        out_dir: dir.join("out"),
        n_train: 20,
        n_test: 5,
        height: 64,
        width: 64,
        sparsity: REFERENCE_SPARSITY,
        ..RunConfig::default()
    }
}

/// Mean RMSE over the test split at the given sparsity.
pub fn test_rmse(cfg: &RunConfig, model: &Model, prop: &PropagationConfig, sparsity: usize) -> Result<f64> {
    let samples = dataset::load_samples(cfg, Split::Test, sparsity)?;
    Ok(mean_test_metrics(model, &samples, prop)?.rmse)
}

/// Mean RMSE of the parameter-free initial fill.
pub fn idw_rmse(samples: &[Sample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| gcspn_core::metrics::evaluate(&s.initial, &s.gt).map_or(f64::NAN, |m| m.rmse))
        .sum();
    total / samples.len() as f64
}

/// Print `criterion N [PASS|FAIL] title: detail` straight to stdout, so the
/// line shows up even when the test harness captures output.
pub fn report(number: u32, title: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!("criterion {number} [{verdict}] {title}: {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
