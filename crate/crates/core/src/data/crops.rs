//! Random and sliding patch extraction.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Sliding-window geometry: patch size, stride and the origin offset of the
/// first patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride: usize,
    #[serde(default)]
    pub offset: (usize, usize),
}

impl PatchGrid {
    pub fn new(patch: usize, stride: usize) -> Self {
        PatchGrid {
            patch,
            stride,
            offset: (0, 0),
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.patch == 0 || self.patch + self.offset.0 > h || self.patch + self.offset.1 > w {
            return Err(Error::Config(format!(
                "patch {} with offset {:?} does not fit a {h}x{w} image",
                self.patch, self.offset
            )));
        }
        Ok(())
    }

    /// Grid dimensions: ⌊(H−off−P)/S⌋+1 rows by ⌊(W−off−P)/S⌋+1 columns.
    pub fn dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - self.offset.0 - self.patch) / self.stride + 1,
            (w - self.offset.1 - self.patch) / self.stride + 1,
        )
    }
}

/// Uniformly random P×P crop; deterministic for a given seed.
pub fn random_crop(img: &Tensor, p: usize, seed: u64) -> Result<Tensor> {
    let (h, w) = image_dims(img)?;
    if p == 0 || p > h || p > w {
        return Err(Error::Config(format!("crop {p} does not fit {h}x{w}")));
    }
    let mut rng = rng_from_seed(seed);
    let r0 = rng.gen_range(0..=h - p);
    let c0 = rng.gen_range(0..=w - p);
    Ok(window(img, w, r0, c0, p))
}

/// All patches of the grid in row-major order, tagged with their cell
/// coordinates.
pub fn sliding_crops(img: &Tensor, grid: &PatchGrid) -> Result<Vec<(usize, usize, Tensor)>> {
    let (h, w) = image_dims(img)?;
    grid.validate(h, w)?;
    let (rows, cols) = grid.dims(h, w);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let r0 = grid.offset.0 + i * grid.stride;
            let c0 = grid.offset.1 + j * grid.stride;
            out.push((i, j, window(img, w, r0, c0, grid.patch)));
        }
    }
    Ok(out)
}

fn image_dims(img: &Tensor) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w] => Ok((*h, *w)),
        s => Err(Error::shape("[H, W] image", format!("{s:?}"))),
    }
}

fn window(img: &Tensor, w: usize, r0: usize, c0: usize, p: usize) -> Tensor {
    let mut data = Vec::with_capacity(p * p);
    for r in r0..r0 + p {
        data.extend_from_slice(&img.data()[r * w + c0..r * w + c0 + p]);
    }
    Tensor::from_vec(vec![p, p], data).unwrap()
}
