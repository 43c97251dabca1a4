//! The three sequence models over design embeddings.
//!
//! All share one skeleton: input projection, sinusoidal positional encoding,
//! a stack of pre-norm causal self-attention blocks, a closing layer norm
//! (whose output is the latent sequence), and a linear + sigmoid decoder.
//!
//! - VDR reconstructs each embedding in the sequence.
//! - AVD predicts the next embedding; its last-position output drives
//!   autoregressive completion.
//! - The VAE baseline adds per-step posterior mean/log-variance heads and
//!   trains on reconstruction plus a KL pull toward the standard normal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use massing_core::seeds;
use massing_core::voxel::{decode_embedding, state_diff, DesignEmbedding};
use massing_neural::checkpoint::{read_checkpoint, write_checkpoint};
use massing_neural::layers::{block_param_names, init_block_params, BlockVars};
use massing_neural::{
    positional_encoding, sgd_step_all, AttentionConfig, ParamSet, Tape, Tensor, Var,
};

use crate::error::{ModelError, Result};
use crate::pipeline::SeqSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Vdr,
    Avd,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vdr => "vdr",
            ModelKind::Avd => "avd",
            ModelKind::Vae => "vae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vdr" => Ok(ModelKind::Vdr),
            "avd" => Ok(ModelKind::Avd),
            "vae" => Ok(ModelKind::Vae),
            other => Err(ModelError::Usage(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub kind: ModelKind,
    pub config: AttentionConfig,
    params: ParamSet,
}

/// Dense forward outputs for one sequence.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Row t estimates e_t (VDR, VAE) or e_{t+1} (AVD); values in (0, 1).
    pub predictions: Tensor,
    /// Final-attention-stack outputs; row t depends on embeddings 0..=t.
    pub latents: Tensor,
    /// Per-step posterior means (VAE only).
    pub posterior_mean: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight on the KL term (VAE only).
    pub kl_weight: f64,
    /// Global L2 norm ceiling for each batch gradient; 0 disables clipping.
    pub grad_clip: f64,
    /// Heavy-ball momentum on the clipped batch gradients; 0 disables it.
    pub momentum: f64,
    /// Per-epoch multiplicative learning-rate decay; 1 keeps it constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.2,
            epochs: 60,
            batch_size: 8,
            kl_weight: 1.0,
            grad_clip: 1.0,
            momentum: 0.9,
            
            lr_decay: 0.99,
        }
    }
}

/// Rescale gradients so their joint L2 norm does not exceed `max_norm`.
pub(crate) fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    /// Mean voxel match per timestep, over the sequences reaching it.
    pub per_timestep: Vec<f64>,
    pub per_timestep_counts: Vec<usize>,
    /// Mean and standard deviation over per-sequence accuracies.
    pub mean: f64,
    pub std: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    kind: String,
    attention: AttentionConfig,
}

struct TapeOutputs {
    preds: Var,
    latents: Var,
    mu: Option<Var>,
    logvar: Option<Var>,
}

impl SequenceModel {
    pub fn new(kind: ModelKind, config: AttentionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(seed);
        let d = config.model_dim;
        let mut params = ParamSet::new();
        params.insert(
            "proj.w",
            Tensor::uniform_init(&[config.input_dim, d], config.input_dim, &mut rng),
        );
        params.insert("proj.b", Tensor::zeros(&[d]));
        for layer in 0..config.layers {
            init_block_params(&mut params, layer, d, &mut rng);
        }
        params.insert("final.gain", Tensor::from_vec(&[d], vec![1.0; d]).unwrap());
        params.insert("final.bias", Tensor::zeros(&[d]));
        if kind == ModelKind::Vae {
            params.insert("post.mu.w", Tensor::uniform_init(&[d, d], d, &mut rng));
            params.insert("post.mu.b", Tensor::zeros(&[d]));
            // Log-variance head starts at zero: unit posterior variance.
            params.insert("post.lv.w", Tensor::zeros(&[d, d]));
            params.insert("post.lv.b", Tensor::zeros(&[d]));
        }
        params.insert(
            "dec.w",
            Tensor::uniform_init(&[d, config.input_dim], d, &mut rng),
        );
        params.insert("dec.b", Tensor::zeros(&[config.input_dim]));
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn expected_param_names(kind: ModelKind, config: &AttentionConfig) -> Vec<String> {
        let mut names = vec!["proj.w".to_string(), "proj.b".to_string()];
        for layer in 0..config.layers {
            names.extend(block_param_names(layer));
        }
        names.push("final.gain".into());
        names.push("final.bias".into());
        if kind == ModelKind::Vae {
            names.extend(
                ["post.mu.w", "post.mu.b", "post.lv.w", "post.lv.b"]
                    .iter()
                    .map(|s| s.to_string()),
            );
        }
        names.push("dec.w".into());
        names.push("dec.b".into());
        names
    }

    fn check_len(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.config.max_len {
            return Err(ModelError::Length {
                len: t,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Build the forward graph; `noise` enables posterior sampling (VAE
    /// training). Returns parameter leaves in parameter order.
    fn build_forward(
        &self,
        tape: &mut Tape,
        embeddings: &Tensor,
        noise: Option<&Tensor>,
    ) -> Result<(Vec<Var>, TapeOutputs)> {
        let (t, width) = embeddings.dims2();
        self.check_len(t)?;
        if width != self.config.input_dim {
            return Err(ModelError::Neural(massing_neural::NeuralError::Shape(
                format!(
                    "embedding width {width} does not match input_dim {}",
                    self.config.input_dim
                ),
            )));
        }

        let leaves = self.params.leaf_all(tape);
        let x = tape.leaf(embeddings.clone());
        let h = tape.matmul(x, leaves[0])?;
        let h = tape.add_row_bias(h, leaves[1])?;
        let pos = tape.leaf(positional_encoding(t, self.config.model_dim));
        let mut h = tape.add(h, pos)?;

        for layer in 0..self.config.layers {
            let base = 2 + layer * 12;
            let vars = BlockVars {
                ln1_gain: leaves[base],
                ln1_bias: leaves[base + 1],
                wq: leaves[base + 2],
                wk: leaves[base + 3],
                wv: leaves[base + 4],
                wo: leaves[base + 5],
                ln2_gain: leaves[base + 6],
                ln2_bias: leaves[base + 7],
                ff_w1: leaves[base + 8],
                ff_b1: leaves[base + 9],
                ff_w2: leaves[base + 10],
                ff_b2: leaves[base + 11],
            };
            h = massing_neural::causal_block(tape, h, &vars, self.config.heads)?;
        }
        let final_base = 2 + self.config.layers * 12;
        let latents = tape.layer_norm(h, leaves[final_base], leaves[final_base + 1])?;

        let (dec_in, mu, logvar) = if self.kind == ModelKind::Vae {
            let mu = tape.matmul(latents, leaves[final_base + 2])?;
            let mu = tape.add_row_bias(mu, leaves[final_base + 3])?;
            let lv = tape.matmul(latents, leaves[final_base + 4])?;
            let lv = tape.add_row_bias(lv, leaves[final_base + 5])?;
            let z = match noise {
                Some(eps) => {
                    let half_lv = tape.scale(lv, 0.5);
                    let sigma = tape.exp(half_lv);
                    let eps = tape.leaf(eps.clone());
                    let scaled = tape.mul(sigma, eps)?;
                    tape.add(mu, scaled)?
                }
                None => mu,
            };
            (z, Some(mu), Some(lv))
        } else {
            (latents, None, None)
        };

        let dec_w = leaves[leaves.len() - 2];
        let dec_b = leaves[leaves.len() - 1];
        let logits = tape.matmul(dec_in, dec_w)?;
        let logits = tape.add_row_bias(logits, dec_b)?;
        let preds = tape.sigmoid(logits);

        Ok((
            leaves,
            TapeOutputs {
                preds,
                latents,
                mu,
                logvar,
            },
        ))
    }

    /// Deterministic forward pass (VAE uses the posterior mean).
    pub fn forward(&self, embeddings: &Tensor) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let (_, out) = self.build_forward(&mut tape, embeddings, None)?;
        Ok(ForwardOutput {
            predictions: tape.value(out.preds).clone(),
            latents: tape.value(out.latents).clone(),
            posterior_mean: out.mu.map(|v| tape.value(v).clone()),
        })
    }

    /// Latent of the final step; the flow model consumes these.
    pub fn final_latent(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        let out = self.forward(embeddings)?;
        let (t, _) = out.latents.dims2();
        Ok(out.latents.row(t - 1).to_vec())
    }

    fn loss_and_grads(
        &self,
        embeddings: &Tensor,
        cfg: &TrainConfig,
        noise_seed: u64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (t, width) = embeddings.dims2();
        let noise = if self.kind == ModelKind::Vae {
            let mut rng = seeds::rng(noise_seed);
            Some(gaussian_tensor(&[t, self.config.model_dim], &mut rng))
        } else {
            None
        };
        let (leaves, out) = self.build_forward(&mut tape, embeddings, noise.as_ref())?;

        // The optimized objective is the per-step sum over embedding
        // dimensions (mean over steps): scaling the elementwise mean back up
        // by the width keeps gradient magnitudes independent of grid volume.
        let loss = match self.kind {
            ModelKind::Vdr => {
                let bce = tape.mean_bce(out.preds, embeddings)?;
                tape.scale(bce, width as f64)
            }
            ModelKind::Avd => {
                debug_assert!(t >= 2);
                let preds = tape.rows(out.preds, 0, t - 1)?;
                let targets =
                    Tensor::from_vec(&[t - 1, width], embeddings.data()[width..].to_vec())
                        .expect("shifted targets");
                let bce = tape.mean_bce(preds, &targets)?;
                tape.scale(bce, width as f64)
            }
            ModelKind::Vae => {
                let bce = tape.mean_bce(out.preds, embeddings)?;
                let recon = tape.scale(bce, width as f64);
                let kl = tape.kl_std_normal(out.mu.unwrap(), out.logvar.unwrap())?;
                // Per-step KL against the per-step reconstruction term keeps
                // the evidence-bound ratio.
                let kl = tape.scale(kl, cfg.kl_weight / t as f64);
                tape.add(recon, kl)?
            }
        };
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let param_grads = leaves[..self.params.len()]
            .iter()
            .map(|&v| grads.wrt(v).clone())
            .collect();
        Ok((value, param_grads))
    }

    /// Mini-batch gradient descent. Deterministic per seed: the shuffle, the
    /// VAE posterior noise, and the fixed-order gradient reduction all derive
    /// from it.
    pub fn train(&mut self, data: &[Tensor], cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
        let usable: Vec<&Tensor> = match self.kind {
            ModelKind::Avd => data.iter().filter(|t| t.dims2().0 >= 2).collect(),
            _ => data.iter().collect(),
        };
        if usable.is_empty() {
            return Err(ModelError::Usage("no trainable sequences".into()));
        }
        for t in &usable {
            self.check_len(t.dims2().0)?;
        }

        let mut order: Vec<usize> = (0..usable.len()).collect();
        let mut shuffle_rng = seeds::rng(seeds::derive_seed(seed, 0));
        let batch = cfg.batch_size.max(1);
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let mut velocity: Option<Vec<Tensor>> = None;

        for epoch in 0..cfg.epochs {
            let lr_epoch = cfg.lr * cfg.lr_decay.powi(epoch as i32);
            for i in (1..order.len()).rev() {
                let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
                order.swap(i, j);
            }
            let mut loss_sum = 0.0;
            for chunk in order.chunks(batch) {
                let results: Vec<(f64, Vec<Tensor>)> = chunk
                    .par_iter()
                    .map(|&i| {
                        let noise_seed =
                            seeds::derive_seed(seeds::derive_seed(seed, 1 + epoch as u64), i as u64);
                        self.loss_and_grads(usable[i], cfg, noise_seed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                // Fixed-order reduction keeps training bit-deterministic.
                let mut summed: Vec<Tensor> = results[0].1.clone();
                for (_, grads) in &results[1..] {
                    for (acc, g) in summed.iter_mut().zip(grads) {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
                let scale = 1.0 / chunk.len() as f64;
                for g in &mut summed {
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                }
                clip_global_norm(&mut summed, cfg.grad_clip);
                let update = if cfg.momentum > 0.0 {
                    let vel = velocity.get_or_insert_with(|| {
                        summed.iter().map(|g| Tensor::zeros(g.shape())).collect()
                    });
                    for (v, g) in vel.iter_mut().zip(&summed) {
                        for (vv, gg) in v.data_mut().iter_mut().zip(g.data()) {
                            *vv = cfg.momentum * *vv + gg;
                        }
                    }
                    vel.clone()
                } else {
                    summed
                };
                if lr_epoch != 0.0 {
                    sgd_step_all(&mut self.params, &update, lr_epoch)?;
                }
                loss_sum += results.iter().map(|(l, _)| l).sum::<f64>();
            }
            let mean_loss = loss_sum / usable.len() as f64;
            if !mean_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            epoch_losses.push(mean_loss);
        }
        Ok(TrainReport { epoch_losses })
    }

    /// Per-timestep and overall reconstruction accuracy: predictions and
    /// targets are decoded to states and compared voxel-wise. AVD compares
    /// against next-step targets.
    pub fn reconstruction_accuracy(&self, samples: &[SeqSample]) -> Result<AccuracyReport> {
        if samples.is_empty() {
            return Err(ModelError::Usage("no sequences to evaluate".into()));
        }
        let per_seq: Vec<(Vec<f64>, f64)> = samples
            .par_iter()
            .map(|sample| -> Result<(Vec<f64>, f64)> {
                let out = self.forward(&sample.embeddings)?;
                let (t, width) = sample.embeddings.dims2();
                let pairs: Vec<(usize, usize)> = match self.kind {
                    ModelKind::Avd => (0..t.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
                    _ => (0..t).map(|i| (i, i)).collect(),
                };
                let mut accs = Vec::with_capacity(pairs.len());
                for (pred_row, target_row) in pairs {
                    let pred = DesignEmbedding::from_raw(out.predictions.row(pred_row).to_vec());
                    let target = DesignEmbedding::from_raw(
                        sample.embeddings.row(target_row).to_vec(),
                    );
                    let pred_state = decode_embedding(&pred, &sample.partition)?;
                    let target_state = decode_embedding(&target, &sample.partition)?;
                    accs.push(state_diff(&pred_state, &target_state)?);
                }
                let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
                let _ = width;
                Ok((accs, mean))
            })
            .collect::<Result<Vec<_>>>()?;

        let max_t = per_seq.iter().map(|(a, _)| a.len()).max().unwrap_or(0);
        let mut per_timestep = vec![0.0; max_t];
        let mut counts = vec![0usize; max_t];
        for (accs, _) in &per_seq {
            for (t, &a) in accs.iter().enumerate() {
                per_timestep[t] += a;
                counts[t] += 1;
            }
        }
        for (total, &count) in per_timestep.iter_mut().zip(&counts) {
            if count > 0 {
                *total /= count as f64;
            }
        }
        let means: Vec<f64> = per_seq.iter().map(|(_, m)| *m).collect();
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / means.len() as f64;
        Ok(AccuracyReport {
            per_timestep,
            per_timestep_counts: counts,
            mean,
            std: var.sqrt(),
        })
    }

    /// Distance between the final-step posterior mean and the prior mean
    /// (zero). VAE only.
    pub fn vae_latent_distance(&self, embeddings: &Tensor) -> Result<f64> {
        if self.kind != ModelKind::Vae {
            return Err(ModelError::Kind {
                expected: "vae",
                actual: self.kind.as_str().to_string(),
            });
        }
        let out = self.forward(embeddings)?;
        let mu = out.posterior_mean.expect("vae forward returns posterior");
        let (t, _) = mu.dims2();
        Ok(mu.row(t - 1).iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = CheckpointConfig {
            kind: self.kind.as_str().to_string(),
            attention: self.config.clone(),
        };
        let json = serde_json::to_string(&config)
            .map_err(|e| ModelError::Usage(format!("config serialization failed: {e}")))?;
        let params: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        write_checkpoint(path, &json, &params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (json, entries) = read_checkpoint(path)?;
        let config: CheckpointConfig = serde_json::from_str(&json)
            .map_err(|e| ModelError::Usage(format!("bad checkpoint config: {e}")))?;
        let kind = ModelKind::parse(&config.kind)?;
        let expected = Self::expected_param_names(kind, &config.attention);
        if entries.len() != expected.len() {
            return Err(ModelError::Usage(format!(
                "checkpoint has {} parameters, expected {}",
                entries.len(),
                expected.len()
            )));
        }
        let mut params = ParamSet::new();
        for ((name, tensor), want) in entries.into_iter().zip(expected) {
            if name != want {
                return Err(ModelError::Usage(format!(
                    "checkpoint parameter {name} where {want} was expected"
                )));
            }
            params.insert(&name, tensor);
        }
        Ok(Self {
            kind,
            config: config.attention,
            params,
        })
    }
}

fn gaussian_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let len: usize = shape.iter().product();
    // Box-Muller from uniform draws keeps the stream stable across rand
    // versions.
    let mut data = Vec::with_capacity(len);
    while data.len() < len {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos());
        if data.len() < len {
            data.push(r * theta.sin());
        }
    }
    Tensor::from_vec(shape, data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> AttentionConfig {
        AttentionConfig {
            layers: 2,
            heads: 2,
            model_dim: 16,
            input_dim: 12,
            max_len: 9,
        }
    }

    fn random_sequence(t: usize, width: usize, seed: u64) -> Tensor {
        let mut rng = seeds::rng(seed);
        let data = (0..t * width)
            .map(|_| {
                let code: u8 = rand::Rng::random_range(&mut rng, 0..8);
                f64::from(code) / 7.0
            })
            .collect();
        Tensor::from_vec(&[t, width], data).unwrap()
    }

    #[test]
    fn predictions_stay_in_the_open_unit_interval() {
        let model = SequenceModel::new(ModelKind::Vdr, tiny_config(), 1).unwrap();
        let out = model.forward(&random_sequence(5, 12, 2)).unwrap();
        assert!(out
            .predictions
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out.predictions.dims2(), (5, 12));
        assert_eq!(out.latents.dims2(), (5, 16));
    }

    #[test]
    fn overlong_sequences_are_rejected() {
        let model = SequenceModel::new(ModelKind::Vdr, tiny_config(), 1).unwrap();
        let err = model.forward(&random_sequence(10, 12, 2)).unwrap_err();
        assert!(matches!(err, ModelError::Length { len: 10, max: 9 }));
    }

    #[test]
    fn avd_training_pairs_shift_by_one() {
        // With the decoder zeroed and bias set to logit(e), an AVD model
        // predicting constant e has zero loss against a constant sequence.
        let mut model = SequenceModel::new(ModelKind::Avd, tiny_config(), 3).unwrap();
        let value: f64 = 3.0 / 7.0;
        let logit = (value / (1.0 - value)).ln();
        for (name, tensor) in model.params_mut().iter_mut() {
            if name == "dec.w" {
                tensor.data_mut().fill(0.0);
            }
            if name == "dec.b" {
                tensor.data_mut().fill(logit);
            }
        }
        let seq = Tensor::from_vec(&[4, 12], vec![value; 48]).unwrap();
        let out = model.forward(&seq).unwrap();
        for v in out.predictions.data() {
            assert!((v - value).abs() < 1e-12);
        }
    }

    #[test]
    fn vdr_reaches_the_bce_minimum_on_a_representable_target() {
        // Decoder surgery: weights zero, bias at the logit of the target.
        let mut model = SequenceModel::new(ModelKind::Vdr, tiny_config(), 4).unwrap();
        let target = random_sequence(1, 12, 9);
        let logits: Vec<f64> = target
            .data()
            .iter()
            .map(|&e| {
                let e = e.clamp(1e-6, 1.0 - 1e-6);
                (e / (1.0 - e)).ln()
            })
            .collect();
        for (name, tensor) in model.params_mut().iter_mut() {
            if name == "dec.w" {
                tensor.data_mut().fill(0.0);
            }
            if name == "dec.b" {
                tensor.data_mut().copy_from_slice(&logits);
            }
        }
        let seq = Tensor::from_vec(
            &[3, 12],
            target.data().iter().cycle().take(36).cloned().collect(),
        )
        .unwrap();
        let out = model.forward(&seq).unwrap();
        // Predictions equal the target at every step (up to the logit clamp
        // used for codes at the interval ends), hitting the BCE floor.
        for row in 0..3 {
            for (p, t) in out.predictions.row(row).iter().zip(target.data()) {
                assert!((p - t).abs() < 2e-6, "pred {p} vs target {t}");
            }
        }
    }

    #[test]
    fn causality_holds_bitwise_for_every_kind() {
        for kind in [ModelKind::Vdr, ModelKind::Avd, ModelKind::Vae] {
            let model = SequenceModel::new(kind, tiny_config(), 5).unwrap();
            let base = random_sequence(7, 12, 11);
            let base_out = model.forward(&base).unwrap();
            for t in 1..7 {
                let mut perturbed = base.clone();
                perturbed.data_mut()[t * 12] = 1.0 - perturbed.data()[t * 12];
                let out = model.forward(&perturbed).unwrap();
                let width = 12;
                assert_eq!(
                    &base_out.predictions.data()[..t * width],
                    &out.predictions.data()[..t * width],
                    "{:?}: prediction rows before {t} changed",
                    kind
                );
                assert_eq!(
                    &base_out.latents.data()[..t * 16],
                    &out.latents.data()[..t * 16],
                    "{:?}: latent rows before {t} changed",
                    kind
                );
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_lr_zero_is_a_no_op() {
        let data: Vec<Tensor> = (0..4).map(|i| random_sequence(6, 12, 20 + i)).collect();
        let cfg = TrainConfig {
            lr: 1e-2,
            epochs: 2,
            batch_size: 2,
            kl_weight: 1.0,
            grad_clip: 1.0,
            momentum: 0.9,
            lr_decay: 1.0,
        };
        let mut a = SequenceModel::new(ModelKind::Vdr, tiny_config(), 7).unwrap();
        let ra = a.train(&data, &cfg, 99).unwrap();
        let mut b = SequenceModel::new(ModelKind::Vdr, tiny_config(), 7).unwrap();
        let rb = b.train(&data, &cfg, 99).unwrap();
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }

        let mut c = SequenceModel::new(ModelKind::Vdr, tiny_config(), 7).unwrap();
        let before = c.params().clone();
        let frozen = TrainConfig { lr: 0.0, ..cfg };
        c.train(&data, &frozen, 99).unwrap();
        assert_eq!(c.params(), &before);
    }

    #[test]
    fn vae_distance_semantics() {
        let mut model = SequenceModel::new(ModelKind::Vae, tiny_config(), 8).unwrap();
        // Zero the posterior-mean head: distance collapses to zero.
        for (name, tensor) in model.params_mut().iter_mut() {
            if name == "post.mu.w" || name == "post.mu.b" {
                tensor.data_mut().fill(0.0);
            }
        }
        let seq = random_sequence(5, 12, 31);
        assert!(model.vae_latent_distance(&seq).unwrap() < 1e-12);
        assert_eq!(
            model.vae_latent_distance(&seq).unwrap(),
            model.vae_latent_distance(&seq).unwrap()
        );

        let vdr = SequenceModel::new(ModelKind::Vdr, tiny_config(), 8).unwrap();
        assert!(matches!(
            vdr.vae_latent_distance(&seq),
            Err(ModelError::Kind { .. })
        ));
    }

    #[test]
    fn vae_elbo_decreases_over_early_epochs() {
        let data: Vec<Tensor> = (0..3).map(|i| random_sequence(5, 12, 40 + i)).collect();
        let mut model = SequenceModel::new(ModelKind::Vae, tiny_config(), 9).unwrap();
        let cfg = TrainConfig {
            lr: 5e-3,
            epochs: 6,
            batch_size: 3,
            kl_weight: 1.0,
            grad_clip: 1.0,
            momentum: 0.9,
            lr_decay: 1.0,
        };
        let report = model.train(&data, &cfg, 5).unwrap();
        assert!(
            report.epoch_losses.last().unwrap() <= report.epoch_losses.first().unwrap(),
            "losses did not decrease: {:?}",
            report.epoch_losses
        );
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_forward_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        let model = SequenceModel::new(ModelKind::Vae, tiny_config(), 12).unwrap();
        model.save(&path).unwrap();
        let loaded = SequenceModel::load(&path).unwrap();
        assert_eq!(loaded.kind, ModelKind::Vae);
        let seq = random_sequence(6, 12, 50);
        let a = model.forward(&seq).unwrap();
        let b = loaded.forward(&seq).unwrap();
        assert_eq!(a.predictions.data(), b.predictions.data());
        assert_eq!(a.latents.data(), b.latents.data());
    }
}
