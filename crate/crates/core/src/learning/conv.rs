//! 3×3 convolution with replicate padding on pixel-major `H×W×C` buffers.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    /// `[cout][cin][ky][kx]`, flattened.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[inline]
fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

impl Conv3x3 {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Conv3x3 {
            cin,
            cout,
            weight: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }

    /// Uniform `±1/√(9·cin)` for weights and biases.
    pub fn random(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let mut c = Self::zeros(cin, cout);
        let bound = 1.0 / ((9 * cin) as f64).sqrt();
        for w in c.weight.iter_mut().chain(c.bias.iter_mut()) {
            *w = rng.uniform(-bound, bound);
        }
        c
    }

    pub fn zero_grad(&self) -> ConvGrad {
        ConvGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.cin + i) * 3 + ky) * 3 + kx]
    }

    pub fn forward(&self, input: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        if input.len() != height * width * self.cin {
            return Err(Error::Shape(format!(
                "conv input has {} values, expected {height}x{width}x{}",
                input.len(),
                self.cin
            )));
        }
        let mut out = vec![0.0; height * width * self.cout];
        par::for_each_chunk_mut(&mut out, width * self.cout, |y, line| {
            for x in 0..width {
                let dst = &mut line[x * self.cout..(x + 1) * self.cout];
                dst.copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let sy = clamp_index(y as isize + ky as isize - 1, height);
                    for kx in 0..3 {
                        let sx = clamp_index(x as isize + kx as isize - 1, width);
                        let src = &input[(sy * width + sx) * self.cin..][..self.cin];
                        for (o, d) in dst.iter_mut().enumerate() {
                            for (i, &s) in src.iter().enumerate() {
                                *d += self.w(o, i, ky, kx) * s;
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }

    /// Accumulate parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        input: &[f64],
        height: usize,
        width: usize,
        d_out: &[f64],
        grad: &mut ConvGrad,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let mut d_in = want_input_grad.then(|| vec![0.0; input.len()]);
        for y in 0..height {
            for x in 0..width {
                let g = &d_out[(y * width + x) * self.cout..][..self.cout];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (o, &go) in g.iter().enumerate() {
                    grad.bias[o] += go;
                }
                for ky in 0..3 {
                    let sy = clamp_index(y as isize + ky as isize - 1, height);
                    for kx in 0..3 {
                        let sx = clamp_index(x as isize + kx as isize - 1, width);
                        let base = (sy * width + sx) * self.cin;
                        for (o, &go) in g.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for i in 0..self.cin {
                                let wi = ((o * self.cin + i) * 3 + ky) * 3 + kx;
                                grad.weight[wi] += go * input[base + i];
                                if let Some(d) = d_in.as_mut() {
                                    d[base + i] += go * self.weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}
