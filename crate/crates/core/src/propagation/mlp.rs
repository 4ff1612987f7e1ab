//! Small fully connected networks with hand-written backward passes.

use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::rng::Rng;

/// Rows processed per parallel block. Fixed so reductions happen in the
/// same order regardless of thread count.
const BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `max(0, x)`, applied between layers but not after the last one.
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

/// Multi-layer perceptron. Layer `l` maps `widths[l]` to `widths[l + 1]`;
/// weights are stored output-major (`out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Gradient buffers shaped like an [`MlpSpec`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrad {
    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Cached layer inputs from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `acts[l]` is the input to layer `l`; `acts[0]` is the batch input.
    pub acts: Vec<Matrix>,
    pub output: Matrix,
}

impl MlpTrace {
    /// Feed the on/off pattern of every hidden unit into `h`.
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        for a in &self.acts[1..] {
            for chunk in a.data().chunks(64) {
                let mut bits = 0u64;
                for (i, &v) in chunk.iter().enumerate() {
                    if v > 0.0 {
                        bits |= 1 << i;
                    }
                }
                h.write_u64(bits);
            }
        }
    }
}

impl MlpSpec {
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad MLP widths {widths:?}")));
        }
        let layers = widths.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Shape(format!(
                "MLP with {layers} layers got {} weight and {} bias tensors",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            if weights[l].len() != widths[l] * widths[l + 1] || biases[l].len() != widths[l + 1] {
                return Err(Error::Shape(format!("MLP layer {l} parameter size mismatch")));
            }
            if weights[l].iter().chain(&biases[l]).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: l });
            }
        }
        Ok(MlpSpec {
            widths,
            activation,
            weights,
            biases,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let weights = widths.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = widths.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Self::new(widths.to_vec(), Activation::Relu, weights, biases)
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn random(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        for l in 0..m.n_layers() {
            let bound = 1.0 / (widths[l] as f64).sqrt();
            for w in m.weights[l].iter_mut().chain(m.biases[l].iter_mut()) {
                *w = rng.uniform(-bound, bound);
            }
        }
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn forward_row(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            let mut z = self.affine(l, &a);
            if l + 1 < self.n_layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = &self.weights[l];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                self.biases[l][o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn affine_batch(&self, l: usize, x: &Matrix, relu: bool) -> Matrix {
        let n_out = self.widths[l + 1];
        let mut out = Matrix::zeros(x.rows(), n_out);
        par::for_each_chunk_mut(out.data_mut(), BLOCK_ROWS * n_out, |b, block| {
            for (r, dst) in block.chunks_exact_mut(n_out).enumerate() {
                let z = self.affine(l, x.row(b * BLOCK_ROWS + r));
                for (d, v) in dst.iter_mut().zip(z) {
                    *d = if relu { v.max(0.0) } else { v };
                }
            }
        });
        out
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<MlpTrace> {
        if input.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "MLP expects input width {}, got {}",
                self.input_width(),
                input.cols()
            )));
        }
        let mut acts = vec![input.clone()];
        for l in 0..self.n_layers() {
            let last = l + 1 == self.n_layers();
            let next = self.affine_batch(l, &acts[l], !last);
            if last {
                return Ok(MlpTrace { acts, output: next });
            }
            acts.push(next);
        }
        unreachable!()
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the batch input.
    pub fn backward_batch(&self, trace: &MlpTrace, d_out: &Matrix, grad: &mut MlpGrad) -> Matrix {
        let rows = d_out.rows();
        let n_blocks = rows.div_ceil(BLOCK_ROWS);
        let partials = par::map_range(n_blocks, |b| {
            let r0 = b * BLOCK_ROWS;
            let r1 = (r0 + BLOCK_ROWS).min(rows);
            let mut g = self.zero_grad();
            let mut d_in = Vec::with_capacity((r1 - r0) * self.input_width());
            for r in r0..r1 {
                let mut dz = d_out.row(r).to_vec();
                for l in (0..self.n_layers()).rev() {
                    let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
                    let a = trace.acts[l].row(r);
                    let w = &self.weights[l];
                    let gw = &mut g.weights[l];
                    let mut da = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = dz[o];
                        if d == 0.0 {
                            continue;
                        }
                        g.biases[l][o] += d;
                        let wrow = &w[o * n_in..(o + 1) * n_in];
                        let grow = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            grow[i] += d * a[i];
                            da[i] += d * wrow[i];
                        }
                    }
                    if l > 0 {
                        // a is the ReLU output of the previous layer.
                        for (x, &av) in da.iter_mut().zip(a) {
                            if av <= 0.0 {
                                *x = 0.0;
                            }
                        }
                    }
                    dz = da;
                }
                d_in.extend(dz);
            }
            (g, d_in)
        });
        let mut d_input = Vec::with_capacity(rows * self.input_width());
        for (g, d) in partials {
            grad.add_assign(&g);
            d_input.extend(d);
        }
        Matrix::from_vec(rows, self.input_width(), d_input).expect("input gradient shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(m: &MlpSpec, x: &Matrix, probe: &Matrix) -> f64 {
        let t = m.forward_batch(x).unwrap();
        t.output.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn shape_validation() {
        assert!(MlpSpec::zeros(&[3]).is_err());
        assert!(MlpSpec::new(vec![2, 1], Activation::Relu, vec![vec![0.0; 3]], vec![vec![0.0]]).is_err());
        let m = MlpSpec::zeros(&[4, 2]).unwrap();
        assert!(m.forward_batch(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn row_and_batch_agree() {
        let mut rng = Rng::new(5);
        let m = MlpSpec::random(&[5, 7, 3], &mut rng).unwrap();
        let x = Matrix::from_vec(130, 5, (0..650).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let t = m.forward_batch(&x).unwrap();
        for r in 0..130 {
            assert_eq!(t.output.row(r), m.forward_row(x.row(r)).as_slice());
        }
    }

    #[test]
    fn single_layer_gradient_by_hand() {
        // y = w·x + b, L = y  =>  dL/dw = x, dL/db = 1, dL/dx = w.
        let m = MlpSpec::new(vec![2, 1], Activation::Relu, vec![vec![0.5, -2.0]], vec![vec![0.1]]).unwrap();
        let x = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let t = m.forward_batch(&x).unwrap();
        let mut g = m.zero_grad();
        let dx = m.backward_batch(&t, &Matrix::from_rows(&[vec![1.0]]).unwrap(), &mut g);
        assert_eq!(g.weights[0], vec![3.0, 4.0]);
        assert_eq!(g.biases[0], vec![1.0]);
        assert_eq!(dx.row(0), &[0.5, -2.0]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(11);
        let mut m = MlpSpec::random(&[4, 6, 3], &mut rng).unwrap();
        let x = Matrix::from_vec(70, 4, (0..280).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let probe = Matrix::from_vec(70, 3, (0..210).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let t = m.forward_batch(&x).unwrap();
        let mut g = m.zero_grad();
        let dx = m.backward_batch(&t, &probe, &mut g);
        let h = 1e-6;
        for l in 0..2 {
            for i in 0..m.weights[l].len() {
                let orig = m.weights[l][i];
                m.weights[l][i] = orig + h;
                let up = loss(&m, &x, &probe);
                m.weights[l][i] = orig - h;
                let down = loss(&m, &x, &probe);
                m.weights[l][i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g.weights[l][i]).abs() < 1e-6 * fd.abs().max(1.0), "w{l}[{i}]");
            }
        }
        let mut xp = x.clone();
        for i in 0..8 {
            let orig = xp.data()[i];
            xp.data_mut()[i] = orig + h;
            let up = loss(&m, &xp, &probe);
            xp.data_mut()[i] = orig - h;
            let down = loss(&m, &xp, &probe);
            xp.data_mut()[i] = orig;
            assert!(((up - down) / (2.0 * h) - dx.data()[i]).abs() < 1e-6);
        }
    }
}
