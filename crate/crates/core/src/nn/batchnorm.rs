//! Batch normalization over the channel axis of `[B, C, H, W]` inputs or the
//! feature axis of `[B, D]` inputs.
//!
//! The normalizer is `sqrt(max(var, eps))`: for non-degenerate batches the
//! normalized output has batch variance exactly 1, and the floor keeps
//! constant channels finite.

use super::{LayerCache, Mode, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Iterates channel slices: yields (channel, element indices).
fn channel_layout(shape: &[usize], channels: usize) -> Result<(usize, usize, usize)> {
    // Returns (batch, spatial, stride experiment): element index of sample b,
    // channel c, position s is b·channels·spatial + c·spatial + s.
    match shape.len() {
        2 if shape[1] == channels => Ok((shape[0], 1, channels)),
        4 if shape[1] == channels => Ok((shape[0], shape[2] * shape[3], channels)),
        _ => Err(Error::shape(
            format!("[B, {channels}] or [B, {channels}, H, W]"),
            format!("{shape:?}"),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    x: &Tensor,
    channels: usize,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
) -> Result<(Tensor, LayerCache)> {
    let (batch, spatial, _) = channel_layout(x.shape(), channels)?;
    let m = batch * spatial;
    let mut out = x.clone();
    let mut x_hat = x.zeros_like();
    let mut inv_std = vec![0.0; channels];
    let mut floored = vec![false; channels];
    let mut new_running = None;

    let (means, vars) = match mode {
        Mode::Train => {
            if m == 0 {
                return Err(Error::Config("batch norm on empty batch".into()));
            }
            let mut means = vec![0.0; channels];
            let mut vars = vec![0.0; channels];
            for c in 0..channels {
                let mut sum = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    sum += x.data()[base..base + spatial].iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    ss += x.data()[base..base + spatial]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                means[c] = mean;
                vars[c] = ss / m as f64;
            }
            // Running stats use the unbiased variance.
            let mut rm = running_mean.data().to_vec();
            let mut rv = running_var.data().to_vec();
            for c in 0..channels {
                let unbiased = if m > 1 {
                    vars[c] * m as f64 / (m - 1) as f64
                } else {
                    vars[c]
                };
                rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * means[c];
                rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * unbiased;
            }
            new_running = Some((rm, rv));
            (means, vars)
        }
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    for c in 0..channels {
        let var = vars[c];
        floored[c] = var <= BN_EPS;
        let denom = var.max(BN_EPS).sqrt();
        inv_std[c] = 1.0 / denom;
        let (g, s) = (scale[c], shift[c]);
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                let xh = (x.data()[i] - means[c]) * inv_std[c];
                x_hat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + s;
            }
        }
    }

    Ok((
        out,
        LayerCache::BatchNorm {
            x_hat,
            inv_std,
            floored,
            new_running,
        },
    ))
}

pub(crate) fn backward(
    channels: usize,
    scale: &Tensor,
    cache: &LayerCache,
    grad_out: &Tensor,
    mode: Mode,
) -> (Tensor, Tensor, Tensor) {
    let LayerCache::BatchNorm {
        x_hat,
        inv_std,
        floored,
        ..
    } = cache
    else {
        unreachable!("batch norm backward with mismatched cache");
    };
    let (batch, spatial, _) = channel_layout(x_hat.shape(), channels).unwrap();
    let m = (batch * spatial) as f64;
    let mut gx = grad_out.zeros_like();
    let mut gscale = Tensor::zeros(vec![channels]);
    let mut gshift = Tensor::zeros(vec![channels]);

    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                let dy = grad_out.data()[i];
                sum_dy += dy;
                sum_dy_xhat += dy * x_hat.data()[i];
            }
        }
        gshift[c] = sum_dy;
        gscale[c] = sum_dy_xhat;

        let g = scale[c];
        match mode {
            Mode::Eval => {
                // Running stats are constants: dx = dy·γ·inv_std.
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for i in base..base + spatial {
                        gx.data_mut()[i] = grad_out.data()[i] * g * inv_std[c];
                    }
                }
            }
            Mode::Train => {
                let mean_dy = sum_dy / m;
                let mean_dy_xhat = sum_dy_xhat / m;
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for i in base..base + spatial {
                        let dxhat = grad_out.data()[i] * g;
                        gx.data_mut()[i] = if floored[c] {
                            // Denominator is the constant sqrt(eps); only the
                            // batch mean couples the elements.
                            (dxhat - g * mean_dy) * inv_std[c]
                        } else {
                            (dxhat
                                - g * mean_dy
                                - x_hat.data()[i] * g * mean_dy_xhat)
                                * inv_std[c]
                        };
                    }
                }
            }
        }
    }
    (gx, gscale, gshift)
}
