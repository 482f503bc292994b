//! Negative-ELBO training loop with manually chained gradients.

use super::{negative_elbo, reparameterize, Segment, VaeKind, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, AdamState, Cache, Mode};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamSettings,
    /// Square crop size drawn from each training image per step; must equal
    /// the model's input size. When the image already has that size the crop
    /// is the whole image.
    pub crop_size: usize,
}

/// Optimizer constants, serializable for configs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamSettings {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        let c = AdamConfig::default();
        AdamSettings {
            alpha: c.alpha,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

impl From<AdamSettings> for AdamConfig {
    fn from(s: AdamSettings) -> Self {
        AdamConfig {
            alpha: s.alpha,
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
            weight_decay: s.weight_decay,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

pub(crate) struct SegGrads {
    pub enc_body: nn::ParamStore,
    pub enc_head: nn::ParamStore,
    pub dec_head: nn::ParamStore,
    pub dec_body: nn::ParamStore,
}

struct Pass {
    loss: f64,
    grads: SegGrads,
    enc_body_cache: Option<Cache>,
    dec_body_cache: Option<Cache>,
}

impl VaeModel {
    /// Training loss of one batch at fixed reparameterization noise, as a
    /// pure function of the parameters. Used by gradient checks.
    pub fn elbo_loss(&self, x: &Tensor, noise: &Tensor) -> Result<f64> {
        let (xb, batch) = self.to_batch(x)?;
        let flat = xb.clone().reshape(vec![batch, self.config.n_x()])?;
        match self.config.kind {
            VaeKind::Vae => {
                let (enc, _, _, _) = self.encode_full(&xb, Mode::Train)?;
                let z = reparameterize(&enc, noise)?;
                let (dec, _, _, _) = self.decode_full(&z, Mode::Train)?;
                let scores = negative_elbo(&flat, &enc, &dec)?;
                Ok(scores.iter().map(|s| s.l).sum::<f64>() / batch as f64)
            }
            VaeKind::Ae => {
                let (enc, _, _, _) = self.encode_full(&xb, Mode::Train)?;
                let (dec, _, _, _) = self.decode_full(&enc.mu_z, Mode::Train)?;
                let n_x = self.config.n_x() as f64;
                let mut total = 0.0;
                for (x, r) in flat.data().iter().zip(dec.mu_x.data()) {
                    total += (x - r) * (x - r);
                }
                Ok(total / n_x / batch as f64)
            }
        }
    }

    /// Loss plus gradients for every learnable parameter, via the exact
    /// reverse pass through decoder, reparameterization and encoder.
    pub fn elbo_grads(&self, x: &Tensor, noise: &Tensor) -> Result<(f64, Vec<f64>)> {
        let (xb, _) = self.to_batch(x)?;
        let pass = self.loss_and_grads(&xb, noise)?;
        let g = &pass.grads;
        let mut flat = Vec::new();
        for store in [&g.enc_body, &g.enc_head, &g.dec_head, &g.dec_body] {
            flat.extend(store.learnable_flat());
        }
        Ok((pass.loss, flat))
    }

    fn loss_and_grads(&self, xb: &Tensor, noise: &Tensor) -> Result<Pass> {
        let batch = xb.shape()[0];
        let n_x = self.config.n_x();
        let nz = self.config.n_z;
        let inv_b = 1.0 / batch as f64;
        let flat_x = xb.clone().reshape(vec![batch, n_x])?;

        let (enc, enc_body_cache, enc_head_cache, lv_z_raw) =
            self.encode_full(xb, Mode::Train)?;
        let z = match self.config.kind {
            VaeKind::Vae => reparameterize(&enc, noise)?,
            VaeKind::Ae => enc.mu_z.clone(),
        };
        let (dec, dec_head_cache, dec_body_cache, lv_x_raw) =
            self.decode_full(&z, Mode::Train)?;

        // Loss and the gradient at the decoder's two heads.
        let mut d_mu_x = Tensor::zeros(vec![batch, n_x]);
        let mut d_lv_x = Tensor::zeros(vec![batch, n_x]);
        let loss = match self.config.kind {
            VaeKind::Vae => {
                let scores = negative_elbo(&flat_x, &enc, &dec)?;
                for b in 0..batch {
                    for i in 0..n_x {
                        let idx = b * n_x + i;
                        let lv = dec.log_var_x[idx];
                        let var = lv.exp();
                        let diff = dec.mu_x[idx] - flat_x[idx];
                        d_mu_x.data_mut()[idx] = diff / var * inv_b;
                        let m_i = 0.5 * diff * diff / var;
                        let clamped = lv_x_raw[idx].abs() > super::LOG_VAR_CLAMP;
                        d_lv_x.data_mut()[idx] =
                            if clamped { 0.0 } else { (0.5 - m_i) * inv_b };
                    }
                }
                scores.iter().map(|s| s.l).sum::<f64>() * inv_b
            }
            VaeKind::Ae => {
                let mut total = 0.0;
                for b in 0..batch {
                    for i in 0..n_x {
                        let idx = b * n_x + i;
                        let diff = dec.mu_x[idx] - flat_x[idx];
                        total += diff * diff;
                        d_mu_x.data_mut()[idx] = 2.0 * diff / n_x as f64 * inv_b;
                    }
                }
                total / n_x as f64 * inv_b
            }
        };

        // Assemble the decoder-stack output gradient in the stack's layout.
        let two_headed = self.config.kind == VaeKind::Vae;
        let grad_dec_out = if self.dec_body.is_empty() {
            let width = if two_headed { 2 * n_x } else { n_x };
            let mut g = Tensor::zeros(vec![batch, width]);
            for b in 0..batch {
                g.data_mut()[b * width..b * width + n_x]
                    .copy_from_slice(&d_mu_x.data()[b * n_x..(b + 1) * n_x]);
                if two_headed {
                    g.data_mut()[b * width + n_x..(b + 1) * width]
                        .copy_from_slice(&d_lv_x.data()[b * n_x..(b + 1) * n_x]);
                }
            }
            g
        } else {
            // Conv layout: channel 0 = mean, channel 1 = log-variance.
            let ch = if two_headed { 2 } else { 1 };
            let n = self.config.n_size;
            let mut g = Tensor::zeros(vec![batch, ch, n, n]);
            for b in 0..batch {
                let base = b * ch * n_x;
                g.data_mut()[base..base + n_x]
                    .copy_from_slice(&d_mu_x.data()[b * n_x..(b + 1) * n_x]);
                if two_headed {
                    g.data_mut()[base + n_x..base + 2 * n_x]
                        .copy_from_slice(&d_lv_x.data()[b * n_x..(b + 1) * n_x]);
                }
            }
            g
        };

        // Decoder backward.
        let (grad_into_head, dec_body_grads) = if let Some(cache) = &dec_body_cache {
            let (g4, grads) = nn::backward(
                &self.dec_body.stack,
                &self.dec_body.params,
                cache,
                &grad_dec_out,
            )?;
            let flat: usize = g4.len() / batch;
            (g4.reshape(vec![batch, flat])?, grads)
        } else {
            (grad_dec_out, self.dec_body.params.zeros_like())
        };
        let (d_z, dec_head_grads) = nn::backward(
            &self.dec_head.stack,
            &self.dec_head.params,
            dec_head_cache.as_ref().expect("decoder head is never empty"),
            &grad_into_head,
        )?;

        // Through the reparameterization and the KL term into the encoder
        // head output [μ_z | log σ_z²].
        let mut grad_enc_out = Tensor::zeros(vec![batch, 2 * nz]);
        for b in 0..batch {
            for j in 0..nz {
                let idx = b * nz + j;
                let dz = d_z[idx];
                let (d_mu, d_lv) = match self.config.kind {
                    VaeKind::Vae => {
                        let lv = enc.log_var_z[idx];
                        let d_mu = dz + enc.mu_z[idx] * inv_b;
                        let through_noise = dz * 0.5 * (lv / 2.0).exp() * noise[idx];
                        let kl = 0.5 * (lv.exp() - 1.0) * inv_b;
                        let clamped = lv_z_raw[idx].abs() > super::LOG_VAR_CLAMP;
                        (d_mu, if clamped { 0.0 } else { through_noise + kl })
                    }
                    VaeKind::Ae => (dz, 0.0),
                };
                grad_enc_out.data_mut()[b * 2 * nz + j] = d_mu;
                grad_enc_out.data_mut()[b * 2 * nz + nz + j] = d_lv;
            }
        }

        // Encoder backward.
        let (grad_into_body, enc_head_grads) = nn::backward(
            &self.enc_head.stack,
            &self.enc_head.params,
            enc_head_cache.as_ref().expect("encoder head is never empty"),
            &grad_enc_out,
        )?;
        let enc_body_grads = if let Some(cache) = &enc_body_cache {
            let (c, s) = self.feat;
            let g4 = grad_into_body.reshape(vec![batch, c, s, s])?;
            let (_, grads) =
                nn::backward(&self.enc_body.stack, &self.enc_body.params, cache, &g4)?;
            grads
        } else {
            self.enc_body.params.zeros_like()
        };

        Ok(Pass {
            loss,
            grads: SegGrads {
                enc_body: enc_body_grads,
                enc_head: enc_head_grads,
                dec_head: dec_head_grads,
                dec_body: dec_body_grads,
            },
            enc_body_cache,
            dec_body_cache,
        })
    }

    /// Trains the model in place, one latent sample per step. Returns the
    /// per-epoch mean loss trace; batch-norm running statistics are
    /// finalized as part of training.
    pub fn train(&mut self, images: &[Tensor], cfg: &TrainConfig) -> Result<TrainTrace> {
        if images.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if cfg.crop_size != self.config.n_size {
            return Err(Error::Config(format!(
                "crop_size {} must equal the model input size {}",
                cfg.crop_size, self.config.n_size
            )));
        }
        for (i, img) in images.iter().enumerate() {
            let s = img.shape();
            if s.len() != 2 || s[0] < cfg.crop_size || s[1] < cfg.crop_size {
                return Err(Error::shape(
                    format!("image >= {0}x{0}", cfg.crop_size),
                    format!("image {i}: {s:?}"),
                ));
            }
        }

        let adam: AdamConfig = cfg.adam.into();
        let mut st_enc_body = AdamState::new(&self.enc_body.params, adam);
        let mut st_enc_head = AdamState::new(&self.enc_head.params, adam);
        let mut st_dec_head = AdamState::new(&self.dec_head.params, adam);
        let mut st_dec_body = AdamState::new(&self.dec_body.params, adam);

        let mut rng = rng_from_seed(cfg.seed);
        let n = cfg.crop_size;
        let mut trace = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..images.len()).collect();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let xb = crop_batch(images, chunk, n, &mut rng)?;
                let noise = self.draw_noise(chunk.len(), &mut rng);
                let pass = self.loss_and_grads(&xb, &noise).map_err(|e| {
                    Error::Numerical(format!("training diverged at epoch {epoch}: {e}"))
                })?;
                if let Some(cache) = &pass.enc_body_cache {
                    self.enc_body.params.commit_running_stats(cache);
                }
                if let Some(cache) = &pass.dec_body_cache {
                    self.dec_body.params.commit_running_stats(cache);
                }
                step_segment(&mut self.enc_body, &pass.grads.enc_body, &mut st_enc_body)?;
                step_segment(&mut self.enc_head, &pass.grads.enc_head, &mut st_enc_head)?;
                step_segment(&mut self.dec_head, &pass.grads.dec_head, &mut st_dec_head)?;
                step_segment(&mut self.dec_body, &pass.grads.dec_body, &mut st_dec_body)?;
                loss_sum += pass.loss * chunk.len() as f64;
            }
            trace.push(loss_sum / images.len() as f64);
        }
        Ok(TrainTrace { epoch_loss: trace })
    }

    fn draw_noise(&self, batch: usize, rng: &mut Rng) -> Tensor {
        let nz = self.config.n_z;
        match self.config.kind {
            VaeKind::Vae => Tensor::from_vec(
                vec![batch, nz],
                (0..batch * nz).map(|_| rng.sample(StandardNormal)).collect(),
            )
            .unwrap(),
            VaeKind::Ae => Tensor::zeros(vec![batch, nz]),
        }
    }
}

fn step_segment(seg: &mut Segment, grads: &nn::ParamStore, state: &mut AdamState) -> Result<()> {
    if seg.is_empty() {
        return Ok(());
    }
    nn::adam_step(&mut seg.params, grads, state)
}

/// Stacks random crops of the selected images into a `[B, P, P]` tensor.
fn crop_batch(images: &[Tensor], idx: &[usize], p: usize, rng: &mut Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * p * p);
    for &i in idx {
        let img = &images[i];
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let r0 = rng.gen_range(0..=h - p);
        let c0 = rng.gen_range(0..=w - p);
        for r in 0..p {
            let base = (r0 + r) * w + c0;
            data.extend_from_slice(&img.data()[base..base + p]);
        }
    }
    Tensor::from_vec(vec![idx.len(), p, p], data)
}
