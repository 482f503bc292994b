//! Self-describing binary checkpoint for layer stacks and their parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  b"URNN"
//! version u32      1
//! layers  u32      layer count
//! per layer:
//!   kind  u8       0=dense 1=conv2d 2=batchnorm 3=relu
//!   if conv2d: kernel u32, stride u32, padding u32, transposed u8
//!   tensors u8     tensor count
//!   per tensor: ndim u8, dims u32 × ndim, data f64-LE × prod(dims)
//! ```
//!
//! The f64 payload is written bit-for-bit, so checkpoints round-trip
//! exactly.

use super::{LayerParams, LayerSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"URNN";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, stack: &[LayerSpec], params: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_bytes(&mut buf, stack, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Vec<LayerSpec>, ParamStore)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_bytes(&bytes)
}

pub fn write_bytes(out: &mut Vec<u8>, stack: &[LayerSpec], params: &ParamStore) -> Result<()> {
    if stack.len() != params.layers().len() {
        return Err(Error::Config("stack/parameter layer count mismatch".into()));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(stack.len() as u32).to_le_bytes())?;
    for (spec, lp) in stack.iter().zip(params.layers()) {
        let tensors: Vec<&Tensor> = match lp {
            LayerParams::Dense { weight, bias } | LayerParams::Conv { weight, bias } => {
                vec![weight, bias]
            }
            LayerParams::BatchNorm {
                scale,
                shift,
                running_mean,
                running_var,
            } => vec![scale, shift, running_mean, running_var],
            LayerParams::None => vec![],
        };
        match spec {
            LayerSpec::Dense { .. } => out.push(0),
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                transposed,
                ..
            } => {
                out.push(1);
                out.write_all(&(*kernel as u32).to_le_bytes())?;
                out.write_all(&(*stride as u32).to_le_bytes())?;
                out.write_all(&(*padding as u32).to_le_bytes())?;
                out.push(u8::from(*transposed));
            }
            LayerSpec::BatchNorm { .. } => out.push(2),
            LayerSpec::Relu => out.push(3),
        }
        out.push(tensors.len() as u8);
        for t in tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Malformed {
                offset: self.pos,
                reason: format!("truncated: need {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_bytes(bytes: &[u8]) -> Result<(Vec<LayerSpec>, ParamStore)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Malformed {
            offset: 0,
            reason: "bad magic bytes".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Malformed {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind_off = r.pos;
        let kind = r.u8()?;
        let conv_meta = if kind == 1 {
            let kernel = r.u32()? as usize;
            let stride = r.u32()? as usize;
            let padding = r.u32()? as usize;
            let transposed = r.u8()? != 0;
            Some((kernel, stride, padding, transposed))
        } else {
            None
        };
        let count = r.u8()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            tensors.push(Tensor::from_vec(shape, r.f64s(n)?)?);
        }
        let expect = |want: usize, got: usize| -> Result<()> {
            if want == got {
                Ok(())
            } else {
                Err(Error::Malformed {
                    offset: kind_off,
                    reason: format!("layer kind {kind} expects {want} tensors, found {got}"),
                })
            }
        };
        match kind {
            0 => {
                expect(2, tensors.len())?;
                let bias = tensors.pop().unwrap();
                let weight = tensors.pop().unwrap();
                specs.push(LayerSpec::Dense {
                    in_dim: weight.shape()[1],
                    out_dim: weight.shape()[0],
                });
                layers.push(LayerParams::Dense { weight, bias });
            }
            1 => {
                expect(2, tensors.len())?;
                let bias = tensors.pop().unwrap();
                let weight = tensors.pop().unwrap();
                let (kernel, stride, padding, transposed) = conv_meta.unwrap();
                let (in_ch, out_ch) = if transposed {
                    (weight.shape()[0], weight.shape()[1])
                } else {
                    (weight.shape()[1], weight.shape()[0])
                };
                specs.push(LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    transposed,
                });
                layers.push(LayerParams::Conv { weight, bias });
            }
            2 => {
                expect(4, tensors.len())?;
                let running_var = tensors.pop().unwrap();
                let running_mean = tensors.pop().unwrap();
                let shift = tensors.pop().unwrap();
                let scale = tensors.pop().unwrap();
                specs.push(LayerSpec::BatchNorm {
                    channels: scale.len(),
                });
                layers.push(LayerParams::BatchNorm {
                    scale,
                    shift,
                    running_mean,
                    running_var,
                });
            }
            3 => {
                expect(0, tensors.len())?;
                specs.push(LayerSpec::Relu);
                layers.push(LayerParams::None);
            }
            k => {
                return Err(Error::Malformed {
                    offset: kind_off,
                    reason: format!("unknown layer kind {k}"),
                })
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed {
            offset: r.pos,
            reason: "trailing bytes after last layer".into(),
        });
    }
    Ok((specs, ParamStore::from_layers(layers)))
}
