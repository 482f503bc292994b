//! Gaussian-output variational autoencoder with explicit gradients, plus the
//! plain autoencoder baseline mode.
//!
//! The encoder maps an image to the posterior parameters (μ_z, log σ_z²);
//! the decoder maps a latent to the likelihood parameters (μ_x, log σ_x²).
//! Training minimizes the negative ELBO `D + A + M` with one latent sample
//! per step; scoring is deterministic at the posterior mean z = μ_z.

mod checkpoint;
mod train;

pub use train::{AdamSettings, TrainConfig, TrainTrace};

use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, Cache, LayerSpec, Mode, ParamStore};
use crate::rng::Rng;
use crate::scoring::ScoreBreakdown;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Both log-variance heads are clamped to this range so `A` cannot run to
/// −∞ (and `M` to ∞) on perfectly reconstructed pixels.
pub const LOG_VAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VaeKind {
    /// Gaussian-output VAE scored by the negative-ELBO decomposition.
    Vae,
    /// Plain autoencoder scored by mean squared error.
    Ae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VaeArch {
    /// Strided 4×4 convolutions with batch norm, mirrored by transposed
    /// convolutions in the decoder.
    Conv,
    /// Two dense hidden layers on flattened pixels; fast path for small
    /// inputs and unit tests. Score math is identical.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Latent dimension.
    pub n_z: usize,
    /// Channel count of the first feature map (conv arch).
    pub n_c: usize,
    /// Input edge length; inputs are n_size × n_size grayscale.
    pub n_size: usize,
    /// Number of convolution layers (conv arch).
    pub n_conv: usize,
    pub kind: VaeKind,
    pub arch: VaeArch,
    /// Hidden widths of the dense fallback.
    pub dense_hidden: (usize, usize),
    /// Pixel normalization constants (inputs are mapped to [0, 1]).
    pub pixel_min: f64,
    pub pixel_max: f64,
}

impl VaeConfig {
    pub fn toy_conv() -> Self {
        VaeConfig {
            n_z: 20,
            n_c: 32,
            n_size: 32,
            n_conv: 4,
            kind: VaeKind::Vae,
            arch: VaeArch::Conv,
            dense_hidden: (256, 128),
            pixel_min: 0.0,
            pixel_max: 1.0,
        }
    }

    pub fn dense(n_size: usize, n_z: usize, hidden: (usize, usize)) -> Self {
        VaeConfig {
            n_z,
            n_c: 0,
            n_size,
            n_conv: 0,
            kind: VaeKind::Vae,
            arch: VaeArch::Dense,
            dense_hidden: hidden,
            pixel_min: 0.0,
            pixel_max: 1.0,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_size * self.n_size
    }

    fn validate(&self) -> Result<()> {
        if self.n_z == 0 || self.n_size == 0 {
            return Err(Error::Config("n_z and n_size must be positive".into()));
        }
        if self.arch == VaeArch::Conv {
            if self.n_conv == 0 || self.n_c == 0 {
                return Err(Error::Config(
                    "conv arch needs n_conv >= 1 and n_c >= 1".into(),
                ));
            }
            if self.n_size % (1 << self.n_conv) != 0 {
                return Err(Error::Config(format!(
                    "n_size {} not divisible by 2^n_conv = {}",
                    self.n_size,
                    1 << self.n_conv
                )));
            }
        } else if self.dense_hidden.0 == 0 || self.dense_hidden.1 == 0 {
            return Err(Error::Config("dense hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior parameters produced by the encoder. `log_var_z` is clamped to
/// ±[`LOG_VAR_CLAMP`]. Shapes are `[B, N_z]`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub mu_z: Tensor,
    pub log_var_z: Tensor,
}

/// Likelihood parameters produced by the decoder; shapes are `[B, N_x]`.
/// In AE mode `log_var_x` is all zeros and `mu_x` is the reconstruction.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub mu_x: Tensor,
    pub log_var_x: Tensor,
}

/// Encoder/decoder stacks with their parameters. The conv architecture is
/// stored as four segments (conv body + dense head per side) so the 4-D/2-D
/// boundary reshape stays explicit; the dense architecture uses only the
/// head segments.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub(crate) enc_body: Segment,
    pub(crate) enc_head: Segment,
    pub(crate) dec_head: Segment,
    pub(crate) dec_body: Segment,
    /// (channels, spatial) at the conv/dense boundary; (0, 0) for dense arch.
    pub(crate) feat: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub stack: Vec<LayerSpec>,
    pub params: ParamStore,
}

impl Segment {
    fn new(stack: Vec<LayerSpec>, rng: &mut Rng) -> Self {
        let params = ParamStore::init(&stack, rng);
        Segment { stack, params }
    }

    fn empty() -> Self {
        Segment {
            stack: Vec::new(),
            params: ParamStore::from_layers(Vec::new()),
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }

    pub(crate) fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Cache>)> {
        if self.is_empty() {
            return Ok((x.clone(), None));
        }
        let (y, c) = nn::forward(&self.stack, &self.params, x, mode)?;
        Ok((y, Some(c)))
    }
}

impl VaeModel {
    /// Builds a freshly initialized model; all weight randomness comes from
    /// the passed generator.
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let out_ch = match config.kind {
            VaeKind::Vae => 2,
            VaeKind::Ae => 1,
        };
        match config.arch {
            VaeArch::Dense => {
                let n_x = config.n_x();
                let (h1, h2) = config.dense_hidden;
                let enc_head = Segment::new(
                    vec![
                        LayerSpec::Dense {
                            in_dim: n_x,
                            out_dim: h1,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Dense {
                            in_dim: h1,
                            out_dim: h2,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Dense {
                            in_dim: h2,
                            out_dim: 2 * config.n_z,
                        },
                    ],
                    rng,
                );
                let dec_head = Segment::new(
                    vec![
                        LayerSpec::Dense {
                            in_dim: config.n_z,
                            out_dim: h2,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Dense {
                            in_dim: h2,
                            out_dim: h1,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Dense {
                            in_dim: h1,
                            out_dim: out_ch * n_x,
                        },
                    ],
                    rng,
                );
                Ok(VaeModel {
                    config,
                    enc_body: Segment::empty(),
                    enc_head,
                    dec_head,
                    dec_body: Segment::empty(),
                    feat: (0, 0),
                })
            }
            VaeArch::Conv => {
                // n-th conv layer outputs n_c · 2^(n−1) channels; each conv is
                // followed by batch norm and ReLU.
                let mut enc = Vec::new();
                let mut ch = 1;
                for n in 0..config.n_conv {
                    let out = config.n_c << n;
                    enc.push(LayerSpec::conv(ch, out));
                    enc.push(LayerSpec::BatchNorm { channels: out });
                    enc.push(LayerSpec::Relu);
                    ch = out;
                }
                let spatial = config.n_size >> config.n_conv;
                let flat = ch * spatial * spatial;
                let enc_body = Segment::new(enc, rng);
                let enc_head = Segment::new(
                    vec![LayerSpec::Dense {
                        in_dim: flat,
                        out_dim: 2 * config.n_z,
                    }],
                    rng,
                );
                let dec_head = Segment::new(
                    vec![
                        LayerSpec::Dense {
                            in_dim: config.n_z,
                            out_dim: flat,
                        },
                        LayerSpec::Relu,
                    ],
                    rng,
                );
                let mut dec = Vec::new();
                let mut in_ch = ch;
                for n in (0..config.n_conv).rev() {
                    let out = if n == 0 { out_ch } else { config.n_c << (n - 1) };
                    dec.push(LayerSpec::conv_transposed(in_ch, out));
                    if n > 0 {
                        dec.push(LayerSpec::BatchNorm { channels: out });
                        dec.push(LayerSpec::Relu);
                    }
                    in_ch = out;
                }
                let dec_body = Segment::new(dec, rng);
                Ok(VaeModel {
                    config,
                    enc_body,
                    enc_head,
                    dec_head,
                    dec_body,
                    feat: (ch, spatial),
                })
            }
        }
    }

    /// Canonicalizes an input to the batch form the encoder consumes:
    /// `[B, 1, H, W]` for conv, `[B, N_x]` for dense.
    fn to_batch(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        let n = self.config.n_size;
        let n_x = self.config.n_x();
        let shape = x.shape().to_vec();
        let batch = match shape.as_slice() {
            [h, w] if *h == n && *w == n => 1,
            [d] if *d == n_x => 1,
            [b, h, w] if *h == n && *w == n => *b,
            [b, d] if *d == n_x => *b,
            [b, 1, h, w] if *h == n && *w == n => *b,
            _ => {
                return Err(Error::shape(
                    format!("{n}x{n} image(s), flat or batched"),
                    format!("{shape:?}"),
                ))
            }
        };
        let flat = x.clone();
        let shaped = match self.config.arch {
            VaeArch::Conv => flat.reshape(vec![batch, 1, n, n])?,
            VaeArch::Dense => flat.reshape(vec![batch, n_x])?,
        };
        Ok((shaped, batch))
    }

    /// Runs the encoder in the given mode; returns (EncoderOutput, caches,
    /// raw log-variance) — callers outside training use the output only.
    pub(crate) fn encode_full(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(EncoderOutput, Option<Cache>, Option<Cache>, Tensor)> {
        let (xb, batch) = self.to_batch(x)?;
        let (h, body_cache) = self.enc_body.forward(&xb, mode)?;
        let h2 = if self.enc_body.is_empty() {
            h
        } else {
            let flat: usize = h.len() / batch;
            h.reshape(vec![batch, flat])?
        };
        let (out, head_cache) = self.enc_head.forward(&h2, mode)?;
        let nz = self.config.n_z;
        let mut mu = Tensor::zeros(vec![batch, nz]);
        let mut lv_raw = Tensor::zeros(vec![batch, nz]);
        for b in 0..batch {
            for j in 0..nz {
                mu.data_mut()[b * nz + j] = out.data()[b * 2 * nz + j];
                lv_raw.data_mut()[b * nz + j] = out.data()[b * 2 * nz + nz + j];
            }
        }
        let lv = lv_raw.map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP));
        Ok((
            EncoderOutput {
                mu_z: mu,
                log_var_z: lv,
            },
            body_cache,
            head_cache,
            lv_raw,
        ))
    }

    /// Encodes input(s) in eval mode; deterministic.
    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        Ok(self.encode_full(x, Mode::Eval)?.0)
    }

    /// Runs the decoder in the given mode.
    pub(crate) fn decode_full(
        &self,
        z: &Tensor,
        mode: Mode,
    ) -> Result<(DecoderOutput, Option<Cache>, Option<Cache>, Tensor)> {
        let nz = self.config.n_z;
        let z2 = match z.shape() {
            [d] if *d == nz => z.clone().reshape(vec![1, nz])?,
            [_, d] if *d == nz => z.clone(),
            s => return Err(Error::shape(format!("[B, {nz}]"), format!("{s:?}"))),
        };
        let batch = z2.shape()[0];
        let (h, head_cache) = self.dec_head.forward(&z2, mode)?;
        let (out, body_cache) = if self.dec_body.is_empty() {
            (h, None)
        } else {
            let (c, s) = self.feat;
            let h4 = h.reshape(vec![batch, c, s, s])?;
            let (y, cache) = self.dec_body.forward(&h4, mode)?;
            (y, cache)
        };
        let n_x = self.config.n_x();
        let (mu, lv_raw) = self.split_decoder_output(&out, batch)?;
        let lv = match self.config.kind {
            VaeKind::Vae => lv_raw.map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)),
            VaeKind::Ae => Tensor::zeros(vec![batch, n_x]),
        };
        Ok((
            DecoderOutput {
                mu_x: mu,
                log_var_x: lv,
            },
            head_cache,
            body_cache,
            lv_raw,
        ))
    }

    /// Splits the raw decoder stack output into mean and log-variance parts,
    /// both `[B, N_x]`. For AE mode the log-variance part is zeros.
    fn split_decoder_output(&self, out: &Tensor, batch: usize) -> Result<(Tensor, Tensor)> {
        let n_x = self.config.n_x();
        let per = out.len() / batch;
        let two_headed = self.config.kind == VaeKind::Vae;
        let want = if two_headed { 2 * n_x } else { n_x };
        if per != want {
            return Err(Error::shape(
                format!("{want} decoder outputs per sample"),
                format!("{per}"),
            ));
        }
        let mut mu = Tensor::zeros(vec![batch, n_x]);
        let mut lv = Tensor::zeros(vec![batch, n_x]);
        for b in 0..batch {
            let row = &out.data()[b * per..(b + 1) * per];
            mu.data_mut()[b * n_x..(b + 1) * n_x].copy_from_slice(&row[..n_x]);
            if two_headed {
                lv.data_mut()[b * n_x..(b + 1) * n_x].copy_from_slice(&row[n_x..]);
            }
        }
        Ok((mu, lv))
    }

    /// Decodes latent(s) in eval mode; deterministic.
    pub fn decode(&self, z: &Tensor) -> Result<DecoderOutput> {
        Ok(self.decode_full(z, Mode::Eval)?.0)
    }

    /// Scores a single input deterministically: encode, take z = μ_z,
    /// decode, evaluate the negative-ELBO decomposition.
    pub fn score(&self, x: &Tensor) -> Result<ScoreBreakdown> {
        let mut out = self.score_batch(x)?;
        if out.len() != 1 {
            return Err(Error::shape("single sample", format!("{}", out.len())));
        }
        Ok(out.pop().unwrap())
    }

    /// Batch scoring; order-preserving.
    pub fn score_batch(&self, x: &Tensor) -> Result<Vec<ScoreBreakdown>> {
        if self.config.kind != VaeKind::Vae {
            return Err(Error::Config(
                "score requires vae mode; use ae_score for ae mode".into(),
            ));
        }
        let enc = self.encode(x)?;
        let dec = self.decode(&enc.mu_z)?;
        let (xb, batch) = self.to_batch(x)?;
        let flat = xb.reshape(vec![batch, self.config.n_x()])?;
        negative_elbo(&flat, &enc, &dec)
    }

    /// Mean-squared-error anomaly score of the plain autoencoder.
    pub fn ae_score(&self, x: &Tensor) -> Result<f64> {
        if self.config.kind != VaeKind::Ae {
            return Err(Error::Config("ae_score requires ae mode".into()));
        }
        let enc = self.encode(x)?;
        let dec = self.decode(&enc.mu_z)?;
        let (xb, batch) = self.to_batch(x)?;
        if batch != 1 {
            return Err(Error::shape("single sample", format!("batch {batch}")));
        }
        let n_x = self.config.n_x();
        let flat = xb.reshape(vec![batch, n_x])?;
        let mse = flat
            .data()
            .iter()
            .zip(dec.mu_x.data())
            .map(|(x, r)| (x - r) * (x - r))
            .sum::<f64>()
            / n_x as f64;
        Ok(mse)
    }

    /// All learnable parameters flattened in segment order; used by the
    /// finite-difference checks.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for seg in [&self.enc_body, &self.enc_head, &self.dec_head, &self.dec_body] {
            v.extend(seg.params.learnable_flat());
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for seg in [
            &mut self.enc_body,
            &mut self.enc_head,
            &mut self.dec_head,
            &mut self.dec_body,
        ] {
            let n = seg.params.learnable_count();
            seg.params.set_learnable_flat(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len());
    }
}

/// z = μ_z + exp(log σ_z² / 2) ⊙ noise.
pub fn reparameterize(enc: &EncoderOutput, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != enc.mu_z.shape() {
        return Err(Error::shape(
            format!("{:?}", enc.mu_z.shape()),
            format!("{:?}", noise.shape()),
        ));
    }
    let mut z = enc.mu_z.clone();
    for i in 0..z.len() {
        z.data_mut()[i] += (enc.log_var_z[i] / 2.0).exp() * noise[i];
    }
    Ok(z)
}

/// Per-sample negative-ELBO decomposition for a batch:
///
/// * `D = Σ_j ½(−log σ_zj² − 1 + σ_zj² + μ_zj²)`
/// * `A = Σ_i ½ log(2π σ_xi²)`
/// * `M = Σ_i ½ ((x_i − μ_xi)/σ_xi)²`
pub fn negative_elbo(
    x: &Tensor,
    enc: &EncoderOutput,
    dec: &DecoderOutput,
) -> Result<Vec<ScoreBreakdown>> {
    let batch = x.shape()[0];
    let n_x = x.shape()[1];
    let nz = enc.mu_z.shape()[1];
    if dec.mu_x.shape() != [batch, n_x] || enc.mu_z.shape()[0] != batch {
        return Err(Error::shape(
            format!("[{batch}, {n_x}] decoder output"),
            format!("{:?}", dec.mu_x.shape()),
        ));
    }
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut d = 0.0;
        for j in 0..nz {
            let lv = enc.log_var_z[b * nz + j];
            let mu = enc.mu_z[b * nz + j];
            d += 0.5 * (-lv - 1.0 + lv.exp() + mu * mu);
        }
        let mut a = 0.0;
        let mut m = 0.0;
        for i in 0..n_x {
            let lv = dec.log_var_x[b * n_x + i];
            a += 0.5 * ((2.0 * std::f64::consts::PI).ln() + lv);
            let eps = (x[b * n_x + i] - dec.mu_x[b * n_x + i]) / (lv / 2.0).exp();
            m += 0.5 * (eps * eps);
        }
        out.push(ScoreBreakdown::new(d, a, m)?);
    }
    Ok(out)
}
