//! Masked depth losses. Only pixels with positive ground truth contribute,
//! averaged over the number of such pixels.

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    /// Quadratic `r²/2` for `|r| < 1`, linear `|r| - 1/2` beyond.
    SmoothL1,
    /// Mean squared error.
    L2,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::SmoothL1 => "smooth-l1",
            LossKind::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "smooth-l1" | "smooth_l1" => Ok(LossKind::SmoothL1),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other:?}"))),
        }
    }

    fn value(&self, r: f64) -> f64 {
        match self {
            LossKind::L1 => r.abs(),
            LossKind::SmoothL1 => {
                if r.abs() < 1.0 {
                    0.5 * r * r
                } else {
                    r.abs() - 0.5
                }
            }
            LossKind::L2 => r * r,
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        match self {
            LossKind::L1 => sign,
            LossKind::SmoothL1 => {
                if r.abs() < 1.0 {
                    r
                } else {
                    sign
                }
            }
            LossKind::L2 => 2.0 * r,
        }
    }

    /// Index of the smooth piece `r` falls in; changes only at kinks.
    pub(crate) fn piece(&self, r: f64) -> u8 {
        let s = u8::from(r > 0.0) + 2 * u8::from(r < 0.0);
        match self {
            LossKind::SmoothL1 => s + 4 * u8::from(r.abs() < 1.0),
            _ => s,
        }
    }
}

/// Loss value and its gradient with respect to every prediction pixel.
pub fn masked_loss(kind: LossKind, pred: &DepthGrid, gt: &DepthGrid) -> Result<(f64, Vec<f64>)> {
    pred.check_same_shape(gt, "prediction vs ground truth")?;
    masked_loss_raw(kind, pred.values(), gt)
}

/// As [`masked_loss`] on an unvalidated row-major buffer, which may hold
/// negative values.
pub fn masked_loss_raw(kind: LossKind, pred: &[f64], gt: &DepthGrid) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let nv = gt.valid_count();
    if nv == 0 {
        return Err(Error::EmptyMask);
    }
    let scale = 1.0 / nv as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (&p, &g)) in pred.iter().zip(gt.values()).enumerate() {
        if g > 0.0 {
            let r = p - g;
            total += kind.value(r);
            grad[i] = kind.derivative(r) * scale;
        }
    }
    Ok((total * scale, grad))
}

pub fn masked_l1(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    masked_loss(LossKind::L1, pred, gt).map(|(v, _)| v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub main: f64,
    /// Loss of each step's intermediate readout.
    pub auxiliary: Vec<f64>,
    pub valid_count: usize,
}

/// Loss report plus gradients: `d_final` for the final prediction and one
/// buffer per intermediate.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub d_final: Vec<f64>,
    pub d_intermediates: Vec<Vec<f64>>,
}

pub fn loss_with_gradients(
    final_pred: &DepthGrid,
    intermediates: &[DepthGrid],
    gt: &DepthGrid,
    weight: f64,
    kind: LossKind,
) -> Result<(LossReport, LossGradients)> {
    final_pred.check_same_shape(gt, "prediction vs ground truth")?;
    let inter: Vec<&[f64]> = intermediates.iter().map(|d| d.values()).collect();
    loss_with_gradients_raw(final_pred.values(), &inter, gt, weight, kind)
}

/// As [`loss_with_gradients`] on unvalidated buffers.
pub fn loss_with_gradients_raw(
    final_pred: &[f64],
    intermediates: &[&[f64]],
    gt: &DepthGrid,
    weight: f64,
    kind: LossKind,
) -> Result<(LossReport, LossGradients)> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "auxiliary weight must be non-negative, got {weight}"
        )));
    }
    let (main, d_final) = masked_loss_raw(kind, final_pred, gt)?;
    let mut auxiliary = Vec::with_capacity(intermediates.len());
    let mut d_intermediates = Vec::with_capacity(intermediates.len());
    for inter in intermediates {
        let (v, mut g) = masked_loss_raw(kind, inter, gt)?;
        g.iter_mut().for_each(|x| *x *= weight);
        auxiliary.push(v);
        d_intermediates.push(g);
    }
    let total = main + weight * auxiliary.iter().sum::<f64>();
    Ok((
        LossReport {
            total,
            main,
            auxiliary,
            valid_count: gt.valid_count(),
        },
        LossGradients {
            d_final,
            d_intermediates,
        },
    ))
}

/// `total = loss(final) + weight · Σ loss(intermediate)`.
pub fn loss_with_auxiliary(
    final_pred: &DepthGrid,
    intermediates: &[DepthGrid],
    gt: &DepthGrid,
    weight: f64,
    kind: LossKind,
) -> Result<LossReport> {
    loss_with_gradients(final_pred, intermediates, gt, weight, kind).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> DepthGrid {
        DepthGrid::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn masked_l1_examples() {
        assert_eq!(masked_l1(&g(&[1.0, 7.0, 6.0]), &g(&[2.0, 0.0, 4.0])).unwrap(), 1.5);
        assert_eq!(masked_l1(&g(&[2.0, 3.0]), &g(&[2.0, 3.0])).unwrap(), 0.0);
        assert!(matches!(masked_l1(&g(&[1.0]), &g(&[0.0])), Err(Error::EmptyMask)));
    }

    #[test]
    fn kinds() {
        let (v, grad) = masked_loss(LossKind::L2, &g(&[5.0]), &g(&[2.0])).unwrap();
        assert_eq!((v, grad[0]), (9.0, 6.0));
        let (v, _) = masked_loss(LossKind::SmoothL1, &g(&[2.5, 5.0]), &g(&[2.0, 2.0])).unwrap();
        assert_eq!(v, (0.125 + 2.5) / 2.0);
        assert!(LossKind::parse("huber").is_err());
        assert_eq!(LossKind::parse("smooth-l1").unwrap(), LossKind::SmoothL1);
    }

    #[test]
    fn auxiliary_arithmetic() {
        let gt = g(&[1.0]);
        let r = loss_with_auxiliary(&g(&[1.5]), &[g(&[2.0]), g(&[0.0])], &gt, 0.1, LossKind::L1).unwrap();
        assert_eq!(r.main, 0.5);
        assert_eq!(r.auxiliary, vec![1.0, 1.0]);
        assert!((r.total - 0.7).abs() < 1e-15);
        let r0 = loss_with_auxiliary(&g(&[1.5]), &[g(&[2.0])], &gt, 0.0, LossKind::L1).unwrap();
        assert_eq!(r0.total, r0.main);
        assert_eq!(r.total, r.main + 0.1 * r.auxiliary.iter().sum::<f64>());
        assert!(loss_with_auxiliary(&g(&[1.5]), &[], &gt, -1.0, LossKind::L1).is_err());
    }

    #[test]
    fn masked_pixels_never_matter() {
        let gt = g(&[2.0, 0.0, 4.0, 0.0]);
        for kind in [LossKind::L1, LossKind::SmoothL1, LossKind::L2] {
            let (a, ga) = masked_loss(kind, &g(&[1.0, 7.0, 6.0, 0.0]), &gt).unwrap();
            let (b, gb) = masked_loss(kind, &g(&[1.0, 123.0, 6.0, 9.0]), &gt).unwrap();
            assert_eq!(a, b);
            assert_eq!(ga, gb);
            assert_eq!((ga[1], ga[3]), (0.0, 0.0));
        }
    }
}
