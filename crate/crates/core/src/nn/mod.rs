//! Minimal deterministic neural-network core: dense, conv2d (plain and
//! transposed), batch normalization and ReLU layers with explicit
//! reverse-mode gradients, plus the Adam optimizer.
//!
//! Activations are batch tensors: `[B, D]` for dense stacks, `[B, C, H, W]`
//! for convolutional ones. Forward never mutates parameters; batch-norm
//! running-statistic updates are returned in the cache and committed
//! explicitly by the training loop.

mod adam;
mod batchnorm;
pub mod checkpoint;
mod conv;
mod dense;

pub use adam::{AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use rand::Rng as _;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// One layer of a feed-forward stack.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Transposed (fractionally strided) convolution; used by decoders.
        transposed: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 4,
            stride: 2,
            padding: 1,
            transposed: false,
        }
    }

    pub fn conv_transposed(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 4,
            stride: 2,
            padding: 1,
            transposed: true,
        }
    }

    /// Output spatial size for a conv layer given the input size.
    pub fn conv_out_size(&self, in_size: usize) -> Result<usize> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                transposed,
                ..
            } => {
                if transposed {
                    let out = (in_size - 1) * stride + kernel;
                    if out < 2 * padding {
                        return Err(Error::Config(format!(
                            "transposed conv output underflows: in={in_size} k={kernel} s={stride} p={padding}"
                        )));
                    }
                    Ok(out - 2 * padding)
                } else {
                    if in_size + 2 * padding < kernel {
                        return Err(Error::Config(format!(
                            "conv kernel larger than padded input: in={in_size} k={kernel} p={padding}"
                        )));
                    }
                    Ok((in_size + 2 * padding - kernel) / stride + 1)
                }
            }
            _ => Err(Error::Config("conv_out_size on non-conv layer".into())),
        }
    }
}

/// Parameters owned by one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// `weight` is `[out, in]`.
    Dense { weight: Tensor, bias: Tensor },
    /// Plain conv: `weight` is `[out_ch, in_ch, k, k]`.
    /// Transposed conv: `weight` is `[in_ch, out_ch, k, k]`.
    Conv { weight: Tensor, bias: Tensor },
    BatchNorm {
        scale: Tensor,
        shift: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
    None,
}

impl LayerParams {
    /// Tensors updated by the optimizer. Running statistics are excluded.
    pub fn learnable(&self) -> Vec<&Tensor> {
        match self {
            LayerParams::Dense { weight, bias } | LayerParams::Conv { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { scale, shift, .. } => vec![scale, shift],
            LayerParams::None => vec![],
        }
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::Dense { weight, bias } | LayerParams::Conv { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm { scale, shift, .. } => vec![scale, shift],
            LayerParams::None => vec![],
        }
    }
}

/// Per-layer weights plus batch-norm running statistics, with a version
/// counter that invalidates stale backward caches.
#[derive(Debug, Clone)]
pub struct ParamStore {
    layers: Vec<LayerParams>,
    version: u64,
}

/// Forward/eval mode: train uses batch statistics in batch norm, eval uses
/// the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl ParamStore {
    /// Glorot-uniform weights, zero biases, identity batch-norm.
    pub fn init(stack: &[LayerSpec], rng: &mut Rng) -> Self {
        let layers = stack
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
                    let weight = Tensor::from_vec(
                        vec![out_dim, in_dim],
                        (0..out_dim * in_dim)
                            .map(|_| rng.gen_range(-a..=a))
                            .collect(),
                    )
                    .unwrap();
                    LayerParams::Dense {
                        weight,
                        bias: Tensor::zeros(vec![out_dim]),
                    }
                }
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    transposed,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    let fan_out = out_ch * kernel * kernel;
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let shape = if transposed {
                        vec![in_ch, out_ch, kernel, kernel]
                    } else {
                        vec![out_ch, in_ch, kernel, kernel]
                    };
                    let n: usize = shape.iter().product();
                    let weight =
                        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-a..=a)).collect())
                            .unwrap();
                    LayerParams::Conv {
                        weight,
                        bias: Tensor::zeros(vec![out_ch]),
                    }
                }
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm {
                    scale: Tensor::full(vec![channels], 1.0),
                    shift: Tensor::zeros(vec![channels]),
                    running_mean: Tensor::zeros(vec![channels]),
                    running_var: Tensor::full(vec![channels], 1.0),
                },
                LayerSpec::Relu => LayerParams::None,
            })
            .collect();
        ParamStore { layers, version: 0 }
    }

    /// A store of zeros with the same learnable shapes; used for gradients.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|lp| match lp {
                LayerParams::Dense { weight, bias } => LayerParams::Dense {
                    weight: weight.zeros_like(),
                    bias: bias.zeros_like(),
                },
                LayerParams::Conv { weight, bias } => LayerParams::Conv {
                    weight: weight.zeros_like(),
                    bias: bias.zeros_like(),
                },
                LayerParams::BatchNorm {
                    scale,
                    shift,
                    running_mean,
                    running_var,
                } => LayerParams::BatchNorm {
                    scale: scale.zeros_like(),
                    shift: shift.zeros_like(),
                    running_mean: running_mean.zeros_like(),
                    running_var: running_var.zeros_like(),
                },
                LayerParams::None => LayerParams::None,
            })
            .collect();
        ParamStore { layers, version: 0 }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerParams {
        &self.layers[i]
    }

    /// Mutable layer access; bumps the version so outstanding caches become
    /// stale.
    pub fn layer_mut(&mut self, i: usize) -> &mut LayerParams {
        self.version += 1;
        &mut self.layers[i]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        ParamStore { layers, version: 0 }
    }

    /// Applies `f` to every learnable tensor, paired with its gradient slot.
    pub fn for_each_learnable_mut(
        &mut self,
        other: &ParamStore,
        mut f: impl FnMut(&mut Tensor, &Tensor),
    ) {
        self.version += 1;
        for (lp, lg) in self.layers.iter_mut().zip(other.layers.iter()) {
            let grads = lg.learnable();
            for (t, g) in lp.learnable_mut().into_iter().zip(grads) {
                f(t, g);
            }
        }
    }

    pub fn learnable_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.learnable())
            .map(|t| t.len())
            .sum()
    }

    /// Flattened copy of all learnable entries, in layer order.
    pub fn learnable_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.learnable())
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites learnable entries from a flat slice, in layer order.
    pub fn set_learnable_flat(&mut self, flat: &[f64]) {
        self.version += 1;
        let mut off = 0;
        for lp in self.layers.iter_mut() {
            for t in lp.learnable_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        assert_eq!(off, flat.len());
    }

    /// Folds the batch-norm running statistics recorded in a train-mode
    /// cache into the store.
    pub fn commit_running_stats(&mut self, cache: &Cache) {
        self.version += 1;
        for (i, lc) in cache.layers.iter().enumerate() {
            if let LayerCache::BatchNorm {
                new_running: Some((mean, var)),
                ..
            } = lc
            {
                if let LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } = &mut self.layers[i]
                {
                    running_mean.data_mut().copy_from_slice(mean);
                    running_var.data_mut().copy_from_slice(var);
                }
            }
        }
    }
}

/// Activation record from a forward pass; consumed by [`backward`].
#[derive(Debug)]
pub struct Cache {
    layers: Vec<LayerCache>,
    mode: Mode,
    params_version: u64,
}

#[derive(Debug)]
pub(crate) enum LayerCache {
    Dense {
        input: Tensor,
    },
    Conv {
        input: Tensor,
        out_hw: (usize, usize),
    },
    BatchNorm {
        x_hat: Tensor,
        inv_std: Vec<f64>,
        floored: Vec<bool>,
        new_running: Option<(Vec<f64>, Vec<f64>)>,
    },
    Relu {
        input: Tensor,
    },
}

/// Runs the stack on a batch input. Returns the output and the activation
/// record needed for an exact reverse pass.
pub fn forward(
    stack: &[LayerSpec],
    params: &ParamStore,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    if stack.len() != params.layers.len() {
        return Err(Error::Config(format!(
            "stack has {} layers but store has {}",
            stack.len(),
            params.layers.len()
        )));
    }
    input.check_finite("forward input")?;
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(stack.len());
    for (i, spec) in stack.iter().enumerate() {
        let (y, lc) = match (spec, params.layer(i)) {
            (LayerSpec::Dense { in_dim, out_dim }, LayerParams::Dense { weight, bias }) => {
                dense::forward(&x, weight, bias, *in_dim, *out_dim)?
            }
            (spec @ LayerSpec::Conv2d { .. }, LayerParams::Conv { weight, bias }) => {
                conv::forward(&x, spec, weight, bias)?
            }
            (
                LayerSpec::BatchNorm { channels },
                LayerParams::BatchNorm {
                    scale,
                    shift,
                    running_mean,
                    running_var,
                },
            ) => batchnorm::forward(&x, *channels, scale, shift, running_mean, running_var, mode)?,
            (LayerSpec::Relu, LayerParams::None) => {
                let y = x.map(|v| v.max(0.0));
                (y, LayerCache::Relu { input: x.clone() })
            }
            _ => {
                return Err(Error::Config(format!(
                    "layer {i}: spec and parameters disagree"
                )))
            }
        };
        y.check_finite(&format!("layer {i} output"))?;
        caches.push(lc);
        x = y;
    }
    Ok((
        x,
        Cache {
            layers: caches,
            mode,
            params_version: params.version,
        },
    ))
}

/// Exact reverse-mode derivative of [`forward`]. The cache must come from a
/// matching forward call on the same (unmutated) parameters.
pub fn backward(
    stack: &[LayerSpec],
    params: &ParamStore,
    cache: &Cache,
    grad_output: &Tensor,
) -> Result<(Tensor, ParamStore)> {
    if cache.params_version != params.version {
        return Err(Error::StaleCache);
    }
    let mut grads = params.zeros_like();
    let mut g = grad_output.clone();
    for i in (0..stack.len()).rev() {
        g = match (&stack[i], params.layer(i), &cache.layers[i]) {
            (
                LayerSpec::Dense { .. },
                LayerParams::Dense { weight, .. },
                LayerCache::Dense { input },
            ) => {
                let (gx, gw, gb) = dense::backward(input, weight, &g);
                if let LayerParams::Dense { weight, bias } = grads.layer_mut(i) {
                    *weight = gw;
                    *bias = gb;
                }
                gx
            }
            (
                spec @ LayerSpec::Conv2d { .. },
                LayerParams::Conv { weight, .. },
                LayerCache::Conv { input, out_hw },
            ) => {
                let (gx, gw, gb) = conv::backward(input, spec, weight, &g, *out_hw)?;
                if let LayerParams::Conv { weight, bias } = grads.layer_mut(i) {
                    *weight = gw;
                    *bias = gb;
                }
                gx
            }
            (
                LayerSpec::BatchNorm { channels },
                LayerParams::BatchNorm { scale, .. },
                lc @ LayerCache::BatchNorm { .. },
            ) => {
                let (gx, gscale, gshift) = batchnorm::backward(*channels, scale, lc, &g, cache.mode);
                if let LayerParams::BatchNorm { scale, shift, .. } = grads.layer_mut(i) {
                    *scale = gscale;
                    *shift = gshift;
                }
                gx
            }
            (LayerSpec::Relu, LayerParams::None, LayerCache::Relu { input }) => {
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                gx
            }
            _ => return Err(Error::Config(format!("layer {i}: cache mismatch"))),
        };
    }
    Ok((g, grads))
}

/// Adam with L2 weight decay folded into the gradient before the moment
/// updates.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState) -> Result<()> {
    adam::step(params, grads, state)
}

#[cfg(test)]
mod tests;
