//! GMM checkpoint: weights, means and covariances as raw 64-bit
//! little-endian data behind a version header, with the PCA model (when
//! present) serialized alongside in the same file.
//!
//! Layout: magic `URGM`, version u32, n_z u32, dim u32, weights f64×n_z,
//! means f64×n_z·dim, covariances f64×n_z·dim·dim (row-major), pca flag u8;
//! if 1: n_h u32, mean f64×dim, components f64×n_h·dim (row-major),
//! explained variances f64×n_h.

use super::{GmmModel, PcaModel};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"URGM";
const VERSION: u32 = 1;

pub fn save(path: &Path, gmm: &GmmModel, pca: Option<&PcaModel>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(gmm.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(gmm.dim() as u32).to_le_bytes());
    for &w in gmm.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for mu in gmm.means() {
        for &v in mu.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for cov in gmm.covariances() {
        // DMatrix is column-major; emit row-major explicitly.
        for r in 0..cov.nrows() {
            for c in 0..cov.ncols() {
                out.extend_from_slice(&cov[(r, c)].to_le_bytes());
            }
        }
    }
    match pca {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            out.extend_from_slice(&(p.n_components() as u32).to_le_bytes());
            for &v in p.mean().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for r in 0..p.n_components() {
                for c in 0..p.dim() {
                    out.extend_from_slice(&p.components()[(r, c)].to_le_bytes());
                }
            }
            for &v in p.explained_variances() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader {
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
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

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load(path: &Path) -> Result<(GmmModel, Option<PcaModel>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Malformed {
            offset: 0,
            reason: "bad magic bytes (expected URGM)".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Malformed {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let n_z = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let weights = r.f64s(n_z)?;
    let mut means = Vec::with_capacity(n_z);
    for _ in 0..n_z {
        means.push(DVector::from_vec(r.f64s(dim)?));
    }
    let mut covs = Vec::with_capacity(n_z);
    for _ in 0..n_z {
        covs.push(DMatrix::from_row_slice(dim, dim, &r.f64s(dim * dim)?));
    }
    let gmm = GmmModel::from_params(weights, means, covs)?;
    let pca = match r.u8()? {
        0 => None,
        1 => {
            let n_h = r.u32()? as usize;
            let mean = DVector::from_vec(r.f64s(dim)?);
            let components = DMatrix::from_row_slice(n_h, dim, &r.f64s(n_h * dim)?);
            let variances = r.f64s(n_h)?;
            Some(PcaModel::from_parts(mean, components, variances))
        }
        f => {
            return Err(Error::Malformed {
                offset: r.pos - 1,
                reason: format!("bad pca flag {f}"),
            })
        }
    };
    if r.pos != r.bytes.len() {
        return Err(Error::Malformed {
            offset: r.pos,
            reason: "trailing bytes".into(),
        });
    }
    Ok((gmm, pca))
}
