//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::model::Model;
use super::pipeline::{backward, forward, LossSpec, Sample};
use crate::error::Result;
use crate::par;
use crate::propagation::{BackwardHook, PropagationConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Smallest step tried when a difference straddles a kink.
    pub min_step: f64,
    pub hook: BackwardHook,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            min_step: 1e-7,
            hook: BackwardHook::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub count: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    /// Entries that needed a smaller step to stay off a kink.
    pub refined: usize,
    /// Entries sitting on a kink at every step tried; left unchecked.
    pub on_kink: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.count - g.on_kink).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "group,count,max_rel_err,refined,on_kink,status")?;
        for g in &self.groups {
            let status = if g.max_rel_err < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{},{},{:.3e},{},{},{}",
                g.name, g.count, g.max_rel_err, g.refined, g.on_kink, status
            )?;
        }
        write!(
            f,
            "overall: {} (max relative error {:.3e}, tolerance {:.0e})",
            if self.passed() { "pass" } else { "fail" },
            self.max_rel_err(),
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

enum Probe {
    Clean(f64),
    Refined(f64),
    Kink,
}

/// Compare analytic and finite-difference gradients for every trainable
/// scalar. Topology and positions are frozen at the unperturbed run's
/// values, matching how the analytic gradient treats them.
pub fn gradcheck(
    model: &Model,
    sample: &Sample,
    config: &PropagationConfig,
    loss: LossSpec,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = forward(model, sample, config, loss, None)?;
    let analytic = backward(model, &base, options.hook).flatten();
    let geometry = base.prop.geometry();
    let pattern = base.pattern_hash();
    let store = model.to_store();

    let eval = |m: &Model| -> Result<(f64, u64)> {
        let r = forward(m, sample, config, loss, Some(&geometry))?;
        Ok((r.report.total, r.pattern_hash()))
    };

    let mut jobs = Vec::new();
    for (ti, t) in store.tensors().iter().enumerate() {
        if t.trainable {
            jobs.extend((0..t.values.len()).map(|j| (ti, j)));
        }
    }
    let probes: Vec<Result<Probe>> = par::map_slice(&jobs, |&(ti, j)| {
        let mut h = options.step;
        let mut refined = false;
        loop {
            let mut m = model.clone();
            let x = m.tensor_mut(ti)[j];
            m.tensor_mut(ti)[j] = x + h;
            let (up, hu) = eval(&m)?;
            m.tensor_mut(ti)[j] = x - h;
            let (down, hd) = eval(&m)?;
            if hu == pattern && hd == pattern {
                let fd = (up - down) / (2.0 * h);
                return Ok(if refined { Probe::Refined(fd) } else { Probe::Clean(fd) });
            }
            h /= 10.0;
            refined = true;
            if h < options.min_step {
                return Ok(Probe::Kink);
            }
        }
    });

    let mut groups: Vec<GroupReport> = Vec::new();
    for (&(ti, j), probe) in jobs.iter().zip(probes) {
        let name = &store.tensors()[ti].name;
        if groups.last().is_none_or(|g| &g.name != name) {
            groups.push(GroupReport {
                name: name.clone(),
                count: 0,
                max_rel_err: 0.0,
                worst_index: 0,
                refined: 0,
                on_kink: 0,
            });
        }
        let g = groups.last_mut().unwrap();
        g.count += 1;
        let fd = match probe? {
            Probe::Clean(fd) => fd,
            Probe::Refined(fd) => {
                g.refined += 1;
                fd
            }
            Probe::Kink => {
                g.on_kink += 1;
                continue;
            }
        };
        let err = relative_error(analytic[ti][j], fd, options.floor);
        if err > g.max_rel_err || err.is_nan() {
            g.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            g.worst_index = j;
        }
    }
    Ok(GradCheckReport {
        groups,
        tolerance: options.tolerance,
    })
}
