//! The complete learnable model and its mapping to a [`ParamStore`].

use super::conv::Conv3x3;
use super::initializer::{Initializer, InitializerGrads, HIDDEN_CHANNELS, INPUT_CHANNELS};
use super::params::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::propagation::{Activation, MlpGrad, MlpSpec, PropagationConfig, PropagationGrads, PropagationParams};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub patch_h: usize,
    pub patch_w: usize,
    pub scale: f64,
    pub init: Initializer,
    pub prop: PropagationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub init: InitializerGrads,
    pub prop: PropagationGrads,
}

const MLP_NAMES: [&str; 3] = ["psi", "phi_self", "phi_nbr"];

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        let pairs = [
            (&mut self.init.conv1.weight, &other.init.conv1.weight),
            (&mut self.init.conv1.bias, &other.init.conv1.bias),
            (&mut self.init.conv2.weight, &other.init.conv2.weight),
            (&mut self.init.conv2.bias, &other.init.conv2.bias),
        ];
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.prop.add_assign(&other.prop);
    }

    /// One buffer per store tensor, in store order (metadata gets zeros).
    pub fn flatten(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; 2], vec![0.0; 1]];
        out.push(self.init.conv1.weight.clone());
        out.push(self.init.conv1.bias.clone());
        out.push(self.init.conv2.weight.clone());
        out.push(self.init.conv2.bias.clone());
        for g in [&self.prop.psi, &self.prop.phi_self, &self.prop.phi_nbr] {
            push_mlp_grad(&mut out, g);
        }
        out
    }
}

fn push_mlp_grad(out: &mut Vec<Vec<f64>>, g: &MlpGrad) {
    for (w, b) in g.weights.iter().zip(&g.biases) {
        out.push(w.clone());
        out.push(b.clone());
    }
}

impl Model {
    /// Fresh weights, uniform in `±1/√fan_in`, drawn from `seed`.
    pub fn random(seed: u64, patch_h: usize, patch_w: usize, scale: f64) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        let c = patch_h * patch_w;
        let mut rng = Rng::derive(seed, 0x1417);
        let init = Initializer::random(c, &mut rng);
        let prop = PropagationParams::random(c, &mut rng)?;
        Ok(Model {
            patch_h,
            patch_w,
            scale,
            init,
            prop,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn zero_grad(&self) -> ModelGrads {
        ModelGrads {
            init: self.init.zero_grad(),
            prop: self.prop.zero_grad(),
        }
    }

    /// Error unless `config` uses this model's patch size and scale.
    pub fn check_config(&self, config: &PropagationConfig) -> Result<()> {
        if config.patch_h != self.patch_h || config.patch_w != self.patch_w {
            return Err(Error::Checkpoint(format!(
                "model has {}x{} patches, config asks for {}x{}",
                self.patch_h, self.patch_w, config.patch_h, config.patch_w
            )));
        }
        if config.scale != self.scale {
            return Err(Error::Checkpoint(format!(
                "model was trained with scale {}, config has {}",
                self.scale, config.scale
            )));
        }
        Ok(())
    }

    /// Values of the tensor at `index` in [`Model::to_store`] order.
    ///
    /// Panics on metadata tensors and out-of-range indices.
    pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            2 => &mut self.init.conv1.weight,
            3 => &mut self.init.conv1.bias,
            4 => &mut self.init.conv2.weight,
            5 => &mut self.init.conv2.bias,
            i if (6..18).contains(&i) => {
                let k = i - 6;
                let m = match k / 4 {
                    0 => &mut self.prop.psi,
                    1 => &mut self.prop.phi_self,
                    _ => &mut self.prop.phi_nbr,
                };
                let layer = (k % 4) / 2;
                if k % 2 == 0 {
                    &mut m.weights_mut()[layer]
                } else {
                    &mut m.biases_mut()[layer]
                }
            }
            _ => panic!("tensor {index} is not a trainable model tensor"),
        }
    }

    pub fn to_store(&self) -> ParamStore {
        let c = self.patch_len();
        let mut t = vec![
            Tensor::new(
                "meta.patch",
                vec![2],
                vec![self.patch_h as f64, self.patch_w as f64],
                false,
            ),
            Tensor::new("meta.scale", vec![1], vec![self.scale], false),
            Tensor::new(
                "init.conv1.weight",
                vec![HIDDEN_CHANNELS, INPUT_CHANNELS, 3, 3],
                self.init.conv1.weight.clone(),
                true,
            ),
            Tensor::new(
                "init.conv1.bias",
                vec![HIDDEN_CHANNELS],
                self.init.conv1.bias.clone(),
                true,
            ),
            Tensor::new(
                "init.conv2.weight",
                vec![c, HIDDEN_CHANNELS, 3, 3],
                self.init.conv2.weight.clone(),
                true,
            ),
            Tensor::new("init.conv2.bias", vec![c], self.init.conv2.bias.clone(), true),
        ];
        for (name, m) in MLP_NAMES
            .iter()
            .zip([&self.prop.psi, &self.prop.phi_self, &self.prop.phi_nbr])
        {
            let widths = m.widths();
            for l in 0..m.n_layers() {
                t.push(Tensor::new(
                    format!("prop.{name}.{l}.weight"),
                    vec![widths[l + 1], widths[l]],
                    m.weights()[l].clone(),
                    true,
                ));
                t.push(Tensor::new(
                    format!("prop.{name}.{l}.bias"),
                    vec![widths[l + 1]],
                    m.biases()[l].clone(),
                    true,
                ));
            }
        }
        let tensors = t
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .expect("model shapes are consistent");
        ParamStore::new(tensors).expect("model parameters are finite")
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t.values.clone())
        };
        let patch = get("meta.patch", &[2])?;
        let dims: Vec<usize> = patch
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 && v <= 4096.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Checkpoint(format!("bad patch size {v}")))
                }
            })
            .collect::<Result<_>>()?;
        let (patch_h, patch_w) = (dims[0], dims[1]);
        let scale = get("meta.scale", &[1])?[0];
        if !(scale > 0.0) {
            return Err(Error::Checkpoint(format!("bad scale {scale}")));
        }
        let c = patch_h * patch_w;
        let l = c + 3;
        let conv = |prefix: &str, cin: usize, cout: usize| -> Result<Conv3x3> {
            Ok(Conv3x3 {
                cin,
                cout,
                weight: get(&format!("{prefix}.weight"), &[cout, cin, 3, 3])?,
                bias: get(&format!("{prefix}.bias"), &[cout])?,
            })
        };
        let init = Initializer {
            conv1: conv("init.conv1", INPUT_CHANNELS, HIDDEN_CHANNELS)?,
            conv2: conv("init.conv2", HIDDEN_CHANNELS, c)?,
        };
        let hidden = crate::propagation::HIDDEN_WIDTH;
        let mlp = |name: &str, input: usize| -> Result<MlpSpec> {
            let widths = vec![input, hidden, c];
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for i in 0..2 {
                weights.push(get(&format!("prop.{name}.{i}.weight"), &[widths[i + 1], widths[i]])?);
                biases.push(get(&format!("prop.{name}.{i}.bias"), &[widths[i + 1]])?);
            }
            MlpSpec::new(widths, Activation::Relu, weights, biases)
        };
        let prop = PropagationParams {
            psi: mlp("psi", 2 * l)?,
            phi_self: mlp("phi_self", l)?,
            phi_nbr: mlp("phi_nbr", 2 * l)?,
        };
        if store.len() != 6 + 12 {
            return Err(Error::Checkpoint(format!("unexpected tensor count {}", store.len())));
        }
        Ok(Model {
            patch_h,
            patch_w,
            scale,
            init,
            prop,
        })
    }
}
