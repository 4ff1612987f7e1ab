//! Initial depth and feature grid: an inverse-distance fill of the sparse
//! samples plus a learned residual per feature channel.

use super::conv::{Conv3x3, ConvGrad};
use crate::error::{Error, Result};
use crate::grid::{DepthGrid, FeatureGrid};
use crate::par;
use crate::rng::Rng;

pub const IDW_NEIGHBORS: usize = 32;
pub const HIDDEN_CHANNELS: usize = 8;
/// Channels of the convolution input: depth, validity mask, guidance.
pub const INPUT_CHANNELS: usize = 3;

/// Inverse-distance-weighted fill over the nearest valid samples.
///
/// Valid pixels keep their value. Elsewhere the weight of a sample at pixel
/// distance `r` is `r^-2`; nearest samples are chosen by distance with ties
/// broken by raster index.
pub fn idw_fill(sparse: &DepthGrid) -> Result<DepthGrid> {
    let (h, w) = (sparse.height(), sparse.width());
    let sites: Vec<(usize, usize, f64)> = sparse
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (i / w, i % w, v))
        .collect();
    if sites.is_empty() {
        return Err(Error::EmptyMask);
    }
    let take = IDW_NEIGHBORS.min(sites.len());
    let rows = par::map_range(h, |y| {
        let mut dist: Vec<(u64, usize)> = Vec::with_capacity(sites.len());
        (0..w)
            .map(|x| {
                let own = sparse.get(y, x);
                if own > 0.0 {
                    return own;
                }
                dist.clear();
                dist.extend(sites.iter().enumerate().map(|(j, &(sy, sx, _))| {
                    let dy = sy.abs_diff(y) as u64;
                    let dx = sx.abs_diff(x) as u64;
                    (dy * dy + dx * dx, j)
                }));
                if take < dist.len() {
                    dist.select_nth_unstable(take - 1);
                    dist.truncate(take);
                }
                dist.sort_unstable();
                // offsets from the nearest sample keep constant fields exact
                let base = sites[dist[0].1].2;
                let (mut num, mut den) = (0.0, 0.0);
                for &(d2, j) in dist.iter() {
                    let wgt = 1.0 / d2 as f64;
                    num += wgt * (sites[j].2 - base);
                    den += wgt;
                }
                base + num / den
            })
            .collect::<Vec<f64>>()
    });
    DepthGrid::new(h, w, rows.concat())
}

/// The residual convolution stack `conv2(relu(conv1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Initializer {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitializerGrads {
    pub conv1: ConvGrad,
    pub conv2: ConvGrad,
}

/// Intermediate buffers from [`initializer_forward_traced`].
#[derive(Debug, Clone)]
pub struct InitializerTrace {
    pub input: Vec<f64>,
    /// Post-activation hidden layer.
    pub hidden: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl InitializerTrace {
    pub(crate) fn hash_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        for chunk in self.hidden.chunks(64) {
            let bits = chunk
                .iter()
                .enumerate()
                .fold(0u64, |b, (i, &v)| if v > 0.0 { b | 1 << i } else { b });
            h.write_u64(bits);
        }
    }
}

impl Initializer {
    pub fn zeros(channels: usize) -> Self {
        Initializer {
            conv1: Conv3x3::zeros(INPUT_CHANNELS, HIDDEN_CHANNELS),
            conv2: Conv3x3::zeros(HIDDEN_CHANNELS, channels),
        }
    }

    pub fn random(channels: usize, rng: &mut Rng) -> Self {
        let conv1 = Conv3x3::random(INPUT_CHANNELS, HIDDEN_CHANNELS, rng);
        let conv2 = Conv3x3::random(HIDDEN_CHANNELS, channels, rng);
        Initializer { conv1, conv2 }
    }

    pub fn channels(&self) -> usize {
        self.conv2.cout
    }

    pub fn zero_grad(&self) -> InitializerGrads {
        InitializerGrads {
            conv1: self.conv1.zero_grad(),
            conv2: self.conv2.zero_grad(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.conv1.cin != INPUT_CHANNELS || self.conv1.cout != HIDDEN_CHANNELS || self.conv2.cin != HIDDEN_CHANNELS {
            return Err(Error::Shape("initializer convolution widths do not chain".into()));
        }
        Ok(())
    }
}

fn input_stack(initial: &DepthGrid, sparse: &DepthGrid, gray: Option<&DepthGrid>) -> Vec<f64> {
    let mut x = Vec::with_capacity(initial.len() * INPUT_CHANNELS);
    for i in 0..initial.len() {
        x.push(initial.values()[i]);
        x.push(if sparse.values()[i] > 0.0 { 1.0 } else { 0.0 });
        x.push(gray.map_or(0.0, |g| g.values()[i]));
    }
    x
}

/// Feature grid from a precomputed fill, with the buffers backward needs.
pub fn initializer_forward_traced(
    initial: &DepthGrid,
    sparse: &DepthGrid,
    gray: Option<&DepthGrid>,
    init: &Initializer,
) -> Result<(FeatureGrid, InitializerTrace)> {
    init.check()?;
    initial.check_same_shape(sparse, "sparse input vs initial depth")?;
    if let Some(g) = gray {
        initial.check_same_shape(g, "guidance vs initial depth")?;
    }
    let (h, w) = (initial.height(), initial.width());
    let input = input_stack(initial, sparse, gray);
    let mut hidden = init.conv1.forward(&input, h, w)?;
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut out = init.conv2.forward(&hidden, h, w)?;
    let c = init.channels();
    for (i, v) in out.iter_mut().enumerate() {
        *v += initial.values()[i / c];
    }
    let features = FeatureGrid::new(h, w, c, out)?;
    Ok((
        features,
        InitializerTrace {
            input,
            hidden,
            height: h,
            width: w,
        },
    ))
}

pub fn initializer_forward(
    sparse: &DepthGrid,
    gray: Option<&DepthGrid>,
    init: &Initializer,
) -> Result<(DepthGrid, FeatureGrid)> {
    let initial = idw_fill(sparse)?;
    let (features, _) = initializer_forward_traced(&initial, sparse, gray, init)?;
    Ok((initial, features))
}

/// Parameter gradients from `d_features` (pixel-major, channel-fastest).
pub fn initializer_backward(
    init: &Initializer,
    trace: &InitializerTrace,
    d_features: &[f64],
    grads: &mut InitializerGrads,
) {
    let (h, w) = (trace.height, trace.width);
    let mut d_hidden = init
        .conv2
        .backward(&trace.hidden, h, w, d_features, &mut grads.conv2, true)
        .expect("input gradient requested");
    for (d, &a) in d_hidden.iter_mut().zip(&trace.hidden) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    init.conv1
        .backward(&trace.input, h, w, &d_hidden, &mut grads.conv1, false);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_idw(sparse: &DepthGrid, y: usize, x: usize) -> f64 {
        if sparse.get(y, x) > 0.0 {
            return sparse.get(y, x);
        }
        let mut d: Vec<(f64, usize, f64)> = Vec::new();
        for (i, &v) in sparse.values().iter().enumerate() {
            if v > 0.0 {
                let (sy, sx) = ((i / sparse.width()) as f64, (i % sparse.width()) as f64);
                d.push(((sy - y as f64).powi(2) + (sx - x as f64).powi(2), i, v));
            }
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(32);
        let num: f64 = d.iter().map(|&(r2, _, v)| v / r2).sum();
        let den: f64 = d.iter().map(|&(r2, _, _)| 1.0 / r2).sum();
        num / den
    }

    #[test]
    fn single_site_fills_everything() {
        let mut v = vec![0.0; 30];
        v[7] = 3.0;
        let d0 = idw_fill(&DepthGrid::new(5, 6, v).unwrap()).unwrap();
        assert!(d0.values().iter().all(|&x| x == 3.0));
    }

    #[test]
    fn equidistant_pair_averages() {
        let d0 = idw_fill(&DepthGrid::new(1, 5, vec![2.0, 0.0, 0.0, 0.0, 4.0]).unwrap()).unwrap();
        assert_eq!(d0.values()[2], 3.0);
        assert_eq!(d0.values()[0], 2.0);
        assert!(idw_fill(&DepthGrid::zeros(2, 2)).is_err());
    }

    #[test]
    fn matches_brute_force_with_many_sites() {
        let mut rng = Rng::new(11);
        let (h, w) = (17, 13);
        let v: Vec<f64> = (0..h * w)
            .map(|_| {
                if rng.next_f64() < 0.3 {
                    rng.uniform(0.5, 9.0)
                } else {
                    0.0
                }
            })
            .collect();
        let sparse = DepthGrid::new(h, w, v).unwrap();
        assert!(sparse.valid_count() > 32);
        let d0 = idw_fill(&sparse).unwrap();
        for y in 0..h {
            for x in 0..w {
                let want = brute_idw(&sparse, y, x);
                assert!((d0.get(y, x) - want).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn zero_convolution_gives_pure_fill() {
        let mut v = vec![0.0; 64];
        v[9] = 2.0;
        v[50] = 5.0;
        let sparse = DepthGrid::new(8, 8, v).unwrap();
        let gray = DepthGrid::filled(8, 8, 0.5).unwrap();
        let (d0, f) = initializer_forward(&sparse, Some(&gray), &Initializer::zeros(4)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..4 {
                    assert_eq!(f.get(y, x, c), d0.get(y, x));
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let (h, w, c) = (6, 5, 4);
        let v: Vec<f64> = (0..h * w)
            .map(|_| {
                if rng.next_f64() < 0.4 {
                    rng.uniform(1.0, 4.0)
                } else {
                    0.0
                }
            })
            .collect();
        let sparse = DepthGrid::new(h, w, v).unwrap();
        let gray = DepthGrid::new(h, w, (0..h * w).map(|_| rng.next_f64()).collect()).unwrap();
        let d0 = idw_fill(&sparse).unwrap();
        let mut init = Initializer::random(c, &mut rng);
        let probe: Vec<f64> = (0..h * w * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f = |init: &Initializer| -> f64 {
            let (feat, _) = initializer_forward_traced(&d0, &sparse, Some(&gray), init).unwrap();
            feat.values().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = initializer_forward_traced(&d0, &sparse, Some(&gray), &init).unwrap();
        let mut g = init.zero_grad();
        initializer_backward(&init, &trace, &probe, &mut g);
        let eps = 1e-6;
        for i in 0..init.conv1.weight.len() {
            let o = init.conv1.weight[i];
            init.conv1.weight[i] = o + eps;
            let up = f(&init);
            init.conv1.weight[i] = o - eps;
            let down = f(&init);
            init.conv1.weight[i] = o;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g.conv1.weight[i]).abs() < 1e-6 * (1.0 + fd.abs()), "w1[{i}]");
        }
        for i in 0..init.conv2.bias.len() {
            let o = init.conv2.bias[i];
            init.conv2.bias[i] = o + eps;
            let up = f(&init);
            init.conv2.bias[i] = o - eps;
            let down = f(&init);
            init.conv2.bias[i] = o;
            assert!(((up - down) / (2.0 * eps) - g.conv2.bias[i]).abs() < 1e-6);
        }
    }
}
