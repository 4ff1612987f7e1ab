//! Depth-completion error metrics over pixels with valid ground truth.
//!
//! Inverse metrics use `1/d` in 1/meter.

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

pub const METRICS_HEADER: &str = "scene,rmse,mae,irmse,imae,rel,d1,d2,d3";

pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when some valid ground-truth pixel has a non-positive prediction.
    pub irmse: Option<f64>,
    pub imae: Option<f64>,
    pub rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

pub fn evaluate(pred: &DepthGrid, gt: &DepthGrid) -> Result<MetricsRecord> {
    pred.check_same_shape(gt, "prediction vs ground truth")?;
    let mut n = 0usize;
    let (mut se, mut ae, mut ise, mut iae, mut rel) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut inverse_ok = true;
    let mut hits = [0usize; 3];
    for (&d, &g) in pred.values().iter().zip(gt.values()) {
        if g <= 0.0 {
            continue;
        }
        n += 1;
        let err = g - d;
        se += err * err;
        ae += err.abs();
        rel += err.abs() / g;
        if d > 0.0 {
            let ie = 1.0 / g - 1.0 / d;
            ise += ie * ie;
            iae += ie.abs();
            let ratio = (g / d).max(d / g);
            for (hit, t) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
                if ratio < t {
                    *hit += 1;
                }
            }
        } else {
            inverse_ok = false;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricsRecord {
        rmse: (se / nf).sqrt(),
        mae: ae / nf,
        irmse: inverse_ok.then(|| (ise / nf).sqrt()),
        imae: inverse_ok.then(|| iae / nf),
        rel: rel / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
    })
}

/// Field-wise mean; an undefined inverse metric in any record stays undefined.
pub fn mean_metrics(records: &[MetricsRecord]) -> Option<MetricsRecord> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let avg = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| records.iter().map(f).sum::<Option<f64>>().map(|s| s / n);
    Some(MetricsRecord {
        rmse: avg(&|r| r.rmse),
        mae: avg(&|r| r.mae),
        irmse: avg_opt(&|r| r.irmse),
        imae: avg_opt(&|r| r.imae),
        rel: avg(&|r| r.rel),
        delta1: avg(&|r| r.delta1),
        delta2: avg(&|r| r.delta2),
        delta3: avg(&|r| r.delta3),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl MetricsRecord {
    /// Comma-separated values in header order, without the scene column.
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rmse,
            self.mae,
            fmt_opt(self.irmse),
            fmt_opt(self.imae),
            self.rel,
            self.delta1,
            self.delta2,
            self.delta3
        )
    }

    pub fn csv_row(&self, scene: &str) -> String {
        format!("{scene},{}", self.csv_fields())
    }
}
