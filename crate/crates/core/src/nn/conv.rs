//! 2-D convolution (plain and transposed) via im2col/col2im plus GEMM.
//!
//! The transposed variant is the exact adjoint of the plain convolution with
//! the same geometry, which is what mirrored encoder/decoder stacks need.

use super::{LayerCache, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, Tensor};

struct Geom {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    transposed: bool,
}

fn geom(spec: &LayerSpec) -> Geom {
    match *spec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            transposed,
        } => Geom {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            transposed,
        },
        _ => unreachable!("conv math invoked on non-conv spec"),
    }
}

/// Gathers conv patches: `cols[(c,u,v), (i,j)] = img[c, i·s+u−p, j·s+v−p]`,
/// zero outside bounds. `img` is one sample `[C, H, W]` flattened.
fn im2col(
    img: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    let patch = out_h * out_w;
    debug_assert_eq!(cols.len(), ch * k * k * patch);
    cols.fill(0.0);
    for c in 0..ch {
        let img_c = &img[c * h * w..(c + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = ((c * k + u) * k + v) * patch;
                for i in 0..out_h {
                    let r = (i * s + u) as isize - p as isize;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    let src = r as usize * w;
                    let dst = row + i * out_w;
                    for j in 0..out_w {
                        let cc = (j * s + v) as isize - p as isize;
                        if cc >= 0 && cc < w as isize {
                            cols[dst + j] = img_c[src + cc as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into the image, accumulating
/// overlapping contributions.
fn col2im(
    cols: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    out_h: usize,
    out_w: usize,
    img: &mut [f64],
) {
    let patch = out_h * out_w;
    debug_assert_eq!(cols.len(), ch * k * k * patch);
    debug_assert_eq!(img.len(), ch * h * w);
    img.fill(0.0);
    for c in 0..ch {
        let img_c = &mut img[c * h * w..(c + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let row = ((c * k + u) * k + v) * patch;
                for i in 0..out_h {
                    let r = (i * s + u) as isize - p as isize;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    let dst = r as usize * w;
                    let src = row + i * out_w;
                    for j in 0..out_w {
                        let cc = (j * s + v) as isize - p as isize;
                        if cc >= 0 && cc < w as isize {
                            img_c[dst + cc as usize] += cols[src + j];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(
    x: &Tensor,
    spec: &LayerSpec,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerCache)> {
    let g = geom(spec);
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != g.in_ch {
        return Err(Error::shape(
            format!("[B, {}, H, W]", g.in_ch),
            format!("{shape:?}"),
        ));
    }
    let (batch, h, w) = (shape[0], shape[2], shape[3]);
    let out_h = spec.conv_out_size(h)?;
    let out_w = spec.conv_out_size(w)?;
    let out = if g.transposed {
        transposed_forward(x, &g, weight, bias, batch, h, w, out_h, out_w)
    } else {
        plain_forward(x, &g, weight, bias, batch, h, w, out_h, out_w)
    };
    Ok((
        out,
        LayerCache::Conv {
            input: x.clone(),
            out_hw: (out_h, out_w),
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn plain_forward(
    x: &Tensor,
    g: &Geom,
    weight: &Tensor,
    bias: &Tensor,
    batch: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    let kk = g.in_ch * g.kernel * g.kernel;
    let patch = out_h * out_w;
    let mut cols = vec![0.0; kk * patch];
    let mut out = vec![0.0; batch * g.out_ch * patch];
    for b in 0..batch {
        let img = &x.data()[b * g.in_ch * h * w..(b + 1) * g.in_ch * h * w];
        im2col(img, g.in_ch, h, w, g.kernel, g.stride, g.padding, out_h, out_w, &mut cols);
        let out_b = &mut out[b * g.out_ch * patch..(b + 1) * g.out_ch * patch];
        for o in 0..g.out_ch {
            out_b[o * patch..(o + 1) * patch].fill(bias[o]);
        }
        // out_b += W [out_ch, kk] · cols [kk, patch]
        matmul_acc(out_b, weight.data(), &cols, g.out_ch, kk, patch, false, false);
    }
    Tensor::from_vec(vec![batch, g.out_ch, out_h, out_w], out).unwrap()
}

#[allow(clippy::too_many_arguments)]
fn transposed_forward(
    x: &Tensor,
    g: &Geom,
    weight: &Tensor,
    bias: &Tensor,
    batch: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    // Dual geometry: a plain conv maps [out_ch, out_h, out_w] -> [in_ch, h, w];
    // the transposed forward scatters through its adjoint.
    let kk = g.out_ch * g.kernel * g.kernel;
    let patch = h * w;
    let mut cols = vec![0.0; kk * patch];
    let mut out = vec![0.0; batch * g.out_ch * out_h * out_w];
    for b in 0..batch {
        let img = &x.data()[b * g.in_ch * patch..(b + 1) * g.in_ch * patch];
        // cols [kk, patch] = Wᵀ [kk, in_ch] · x_b [in_ch, patch]
        cols.fill(0.0);
        matmul_acc(&mut cols, weight.data(), img, kk, g.in_ch, patch, true, false);
        let out_b = &mut out[b * g.out_ch * out_h * out_w..(b + 1) * g.out_ch * out_h * out_w];
        col2im(
            &cols, g.out_ch, out_h, out_w, g.kernel, g.stride, g.padding, h, w, out_b,
        );
        for o in 0..g.out_ch {
            let span = &mut out_b[o * out_h * out_w..(o + 1) * out_h * out_w];
            for v in span.iter_mut() {
                *v += bias[o];
            }
        }
    }
    Tensor::from_vec(vec![batch, g.out_ch, out_h, out_w], out).unwrap()
}

pub(crate) fn backward(
    input: &Tensor,
    spec: &LayerSpec,
    weight: &Tensor,
    grad_out: &Tensor,
    out_hw: (usize, usize),
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = geom(spec);
    let shape = input.shape();
    let (batch, h, w) = (shape[0], shape[2], shape[3]);
    let (out_h, out_w) = out_hw;
    let mut gw = weight.zeros_like();
    let mut gb = Tensor::zeros(vec![g.out_ch]);
    let mut gx = vec![0.0; input.len()];

    for b in 0..batch {
        let go_b = &grad_out.data()
            [b * g.out_ch * out_h * out_w..(b + 1) * g.out_ch * out_h * out_w];
        for o in 0..g.out_ch {
            let span = &go_b[o * out_h * out_w..(o + 1) * out_h * out_w];
            gb[o] += span.iter().sum::<f64>();
        }
        let x_b = &input.data()[b * g.in_ch * h * w..(b + 1) * g.in_ch * h * w];
        let gx_b = &mut gx[b * g.in_ch * h * w..(b + 1) * g.in_ch * h * w];
        if g.transposed {
            // cols(dy) over the dual geometry: [out_ch·k·k, h·w]
            let kk = g.out_ch * g.kernel * g.kernel;
            let patch = h * w;
            let mut cols = vec![0.0; kk * patch];
            im2col(
                go_b, g.out_ch, out_h, out_w, g.kernel, g.stride, g.padding, h, w, &mut cols,
            );
            // dW [in_ch, kk] += x_b [in_ch, patch] · colsᵀ [patch, kk]
            matmul_acc(gw.data_mut(), x_b, &cols, g.in_ch, patch, kk, false, true);
            // dx [in_ch, patch] = W [in_ch, kk] · cols [kk, patch]
            matmul_acc(gx_b, weight.data(), &cols, g.in_ch, kk, patch, false, false);
        } else {
            let kk = g.in_ch * g.kernel * g.kernel;
            let patch = out_h * out_w;
            let mut cols = vec![0.0; kk * patch];
            im2col(
                x_b, g.in_ch, h, w, g.kernel, g.stride, g.padding, out_h, out_w, &mut cols,
            );
            // dW [out_ch, kk] += dy_b [out_ch, patch] · colsᵀ [patch, kk]
            matmul_acc(gw.data_mut(), go_b, &cols, g.out_ch, patch, kk, false, true);
            // dcols [kk, patch] = Wᵀ [kk, out_ch] · dy_b [out_ch, patch]
            let mut dcols = vec![0.0; kk * patch];
            matmul_acc(&mut dcols, weight.data(), go_b, kk, g.out_ch, patch, true, false);
            col2im(
                &dcols, g.in_ch, h, w, g.kernel, g.stride, g.padding, out_h, out_w, gx_b,
            );
        }
    }
    Ok((
        Tensor::from_vec(shape.to_vec(), gx)?,
        gw,
        gb,
    ))
}
