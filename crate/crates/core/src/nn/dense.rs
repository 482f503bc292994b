//! Fully-connected layer: y = x·Wᵀ + b over a batch.

use super::LayerCache;
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, Tensor};

pub(crate) fn forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_dim: usize,
    out_dim: usize,
) -> Result<(Tensor, LayerCache)> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != in_dim {
        return Err(Error::shape(format!("[B, {in_dim}]"), format!("{shape:?}")));
    }
    let batch = shape[0];
    let mut out = vec![0.0; batch * out_dim];
    for b in 0..batch {
        out[b * out_dim..(b + 1) * out_dim].copy_from_slice(bias.data());
    }
    // out += x [B,in] · Wᵀ [in,out]
    matmul_acc(
        &mut out,
        x.data(),
        weight.data(),
        batch,
        in_dim,
        out_dim,
        false,
        true,
    );
    Ok((
        Tensor::from_vec(vec![batch, out_dim], out)?,
        LayerCache::Dense { input: x.clone() },
    ))
}

pub(crate) fn backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let batch = input.shape()[0];
    let in_dim = input.shape()[1];
    let out_dim = weight.shape()[0];

    // dW = gᵀ [out,B] · x [B,in]
    let mut gw = vec![0.0; out_dim * in_dim];
    matmul_acc(
        &mut gw,
        grad_out.data(),
        input.data(),
        out_dim,
        batch,
        in_dim,
        true,
        false,
    );

    let mut gb = vec![0.0; out_dim];
    for b in 0..batch {
        for o in 0..out_dim {
            gb[o] += grad_out.data()[b * out_dim + o];
        }
    }

    // dx = g [B,out] · W [out,in]
    let mut gx = vec![0.0; batch * in_dim];
    matmul_acc(
        &mut gx,
        grad_out.data(),
        weight.data(),
        batch,
        out_dim,
        in_dim,
        false,
        false,
    );

    (
        Tensor::from_vec(vec![batch, in_dim], gx).unwrap(),
        Tensor::from_vec(vec![out_dim, in_dim], gw).unwrap(),
        Tensor::from_vec(vec![out_dim], gb).unwrap(),
    )
}
