//! VAE checkpoints: four length-prefixed layer-stack blobs in the nn
//! checkpoint format, plus a JSON sidecar with the hyperparameters.
//!
//! Layout: magic `URVA`, version u32, boundary channels u32, boundary
//! spatial u32, then for each of encoder body, encoder head, decoder head,
//! decoder body: blob length u64 followed by the blob (empty segments have
//! length 0).

use super::{Segment, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::nn::checkpoint as nnck;
use crate::nn::ParamStore;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"URVA";
const VERSION: u32 = 1;

impl VaeModel {
    pub fn save(&self, checkpoint: &Path, sidecar: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.feat.0 as u32).to_le_bytes());
        out.extend_from_slice(&(self.feat.1 as u32).to_le_bytes());
        for seg in [&self.enc_body, &self.enc_head, &self.dec_head, &self.dec_body] {
            let mut blob = Vec::new();
            if !seg.is_empty() {
                nnck::write_bytes(&mut blob, &seg.stack, &seg.params)?;
            }
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        std::fs::write(checkpoint, out)?;
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(checkpoint: &Path, sidecar: &Path) -> Result<Self> {
        let config: VaeConfig = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(checkpoint)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Malformed {
                offset: 0,
                reason: "bad magic bytes (expected URVA)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Malformed {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let feat_c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let feat_s = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut pos = 16;
        let mut segments = Vec::with_capacity(4);
        for _ in 0..4 {
            if pos + 8 > bytes.len() {
                return Err(Error::Malformed {
                    offset: pos,
                    reason: "truncated segment length".into(),
                });
            }
            let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            if pos + len > bytes.len() {
                return Err(Error::Malformed {
                    offset: pos,
                    reason: format!("truncated segment: need {len} bytes"),
                });
            }
            let seg = if len == 0 {
                Segment {
                    stack: Vec::new(),
                    params: ParamStore::from_layers(Vec::new()),
                }
            } else {
                let (stack, params) = nnck::read_bytes(&bytes[pos..pos + len])?;
                Segment { stack, params }
            };
            pos += len;
            segments.push(seg);
        }
        if pos != bytes.len() {
            return Err(Error::Malformed {
                offset: pos,
                reason: "trailing bytes after last segment".into(),
            });
        }
        let dec_body = segments.pop().unwrap();
        let dec_head = segments.pop().unwrap();
        let enc_head = segments.pop().unwrap();
        let enc_body = segments.pop().unwrap();
        Ok(VaeModel {
            config,
            enc_body,
            enc_head,
            dec_head,
            dec_body,
            feat: (feat_c, feat_s),
        })
    }
}
