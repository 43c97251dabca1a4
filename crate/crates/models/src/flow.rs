//! Affine-coupling normalizing flow over final-step latents.
//!
//! Each coupling layer passes one half of the vector through unchanged and
//! transforms the other half as `x * exp(s) + t`, where `s` and `t` come
//! from two-hidden-layer tanh networks of the untouched half; consecutive
//! layers swap the halves. Scale outputs are smoothly clamped to (-5, 5).
//! Inputs are standardized with per-dimension statistics of the training
//! latents; the standardization Jacobian is part of the reported density, so
//! `exp(log_prob)` integrates to one over the original latent space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use massing_core::seeds;
use massing_neural::checkpoint::{read_checkpoint, write_checkpoint};
use massing_neural::{sgd_step_all, ParamSet, Tape, Tensor, Var};

use crate::error::{ModelError, Result};

/// Smooth clamp bound on coupling scale outputs.
pub const SCALE_CAP: f64 = 5.0;
/// Floor for standardization deviations.
const STD_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_6;

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub dim: usize,
    pub couplings: usize,
    pub hidden_dim: usize,
    params: ParamSet,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global L2 norm ceiling per batch gradient; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            epochs: 60,
            batch_size: 32,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTrainReport {
    /// Mean negative log-likelihood per epoch.
    pub epoch_nll: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlowCheckpointConfig {
    dim: usize,
    couplings: usize,
    hidden_dim: usize,
}

impl FlowModel {
    pub fn new(dim: usize, couplings: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(ModelError::Usage("flow dimension must be at least 2".into()));
        }
        if couplings == 0 || hidden_dim == 0 {
            return Err(ModelError::Usage(
                "couplings and hidden_dim must be positive".into(),
            ));
        }
        let mut rng = seeds::rng(seed);
        let mut params = ParamSet::new();
        let da = dim / 2;
        let db = dim - da;
        for layer in 0..couplings {
            let (cond, out) = if layer % 2 == 0 { (da, db) } else { (db, da) };
            for net in ["s", "t"] {
                params.insert(
                    &format!("c{layer}.{net}.w1"),
                    Tensor::uniform_init(&[cond, hidden_dim], cond, &mut rng),
                );
                params.insert(&format!("c{layer}.{net}.b1"), Tensor::zeros(&[hidden_dim]));
                params.insert(
                    &format!("c{layer}.{net}.w2"),
                    Tensor::uniform_init(&[hidden_dim, hidden_dim], hidden_dim, &mut rng),
                );
                params.insert(&format!("c{layer}.{net}.b2"), Tensor::zeros(&[hidden_dim]));
                // Zero output layers start the flow at the identity.
                params.insert(&format!("c{layer}.{net}.w3"), Tensor::zeros(&[hidden_dim, out]));
                params.insert(&format!("c{layer}.{net}.b3"), Tensor::zeros(&[out]));
            }
        }
        Ok(Self {
            dim,
            couplings,
            hidden_dim,
            params,
            norm_mean: vec![0.0; dim],
            norm_std: vec![1.0; dim],
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(ModelError::Length {
                len: z.len(),
                max: self.dim,
            });
        }
        Ok(())
    }

    /// Conditioning and transformed index ranges for a layer.
    fn ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let da = self.dim / 2;
        if layer % 2 == 0 {
            (0..da, da..self.dim)
        } else {
            (da..self.dim, 0..da)
        }
    }

    fn net(&self, layer: usize, which: &str, input: &[f64]) -> Vec<f64> {
        let w1 = self.params.get(&format!("c{layer}.{which}.w1"));
        let b1 = self.params.get(&format!("c{layer}.{which}.b1"));
        let w2 = self.params.get(&format!("c{layer}.{which}.w2"));
        let b2 = self.params.get(&format!("c{layer}.{which}.b2"));
        let w3 = self.params.get(&format!("c{layer}.{which}.w3"));
        let b3 = self.params.get(&format!("c{layer}.{which}.b3"));

        let h1 = affine_tanh(input, w1, b1);
        let h2 = affine_tanh(&h1, w2, b2);
        let mut out = affine(&h2, w3, b3);
        if which == "s" {
            for v in &mut out {
                *v = SCALE_CAP * (*v / SCALE_CAP).tanh();
            }
        }
        out
    }

    /// Map a latent to the base space. Returns the transformed vector and
    /// the total log |det| of the map, standardization included.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(z)?;
        let mut x: Vec<f64> = z
            .iter()
            .zip(self.norm_mean.iter().zip(&self.norm_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect();
        let mut log_det: f64 = -self.norm_std.iter().map(|s| s.ln()).sum::<f64>();
        for layer in 0..self.couplings {
            let (cond, trans) = self.ranges(layer);
            let cond_vals = x[cond].to_vec();
            let s = self.net(layer, "s", &cond_vals);
            let t = self.net(layer, "t", &cond_vals);
            for (i, idx) in trans.enumerate() {
                x[idx] = x[idx] * s[i].exp() + t[i];
                log_det += s[i];
            }
        }
        Ok((x, log_det))
    }

    /// Exact inverse of [`FlowModel::forward`].
    pub fn inverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let mut x = u.to_vec();
        for layer in (0..self.couplings).rev() {
            let (cond, trans) = self.ranges(layer);
            let cond_vals = x[cond].to_vec();
            let s = self.net(layer, "s", &cond_vals);
            let t = self.net(layer, "t", &cond_vals);
            for (i, idx) in trans.enumerate() {
                x[idx] = (x[idx] - t[i]) * (-s[i]).exp();
            }
        }
        for (v, (&m, &s)) in x.iter_mut().zip(self.norm_mean.iter().zip(&self.norm_std)) {
            *v = *v * s + m;
        }
        Ok(x)
    }

    /// Exact log-density under the flow via change of variables.
    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        let (u, log_det) = self.forward(z)?;
        let sq: f64 = u.iter().map(|v| v * v).sum();
        Ok(-0.5 * sq - 0.5 * self.dim as f64 * LN_2PI + log_det)
    }

    /// Constant part of the negative log-likelihood (base-measure term plus
    /// the standardization Jacobian).
    fn nll_constant(&self) -> f64 {
        0.5 * self.dim as f64 * LN_2PI + self.norm_std.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// Differentiable core of the negative log-likelihood for one
    /// standardized sample: `0.5*|u|^2 - sum(s)`.
    fn nll_core_on_tape(&self, tape: &mut Tape, leaves: &[Var], z_std: &[f64]) -> Result<Var> {
        let da = self.dim / 2;
        let mut half_a = tape.leaf(Tensor::from_vec(&[1, da], z_std[..da].to_vec()).unwrap());
        let mut half_b =
            tape.leaf(Tensor::from_vec(&[1, self.dim - da], z_std[da..].to_vec()).unwrap());
        let mut log_det: Option<Var> = None;
        for layer in 0..self.couplings {
            let base = layer * 12;
            let (cond, trans) = if layer % 2 == 0 {
                (half_a, half_b)
            } else {
                (half_b, half_a)
            };
            let net = |tape: &mut Tape, offset: usize, scaled: bool| -> Result<Var> {
                let h1 = tape.matmul(cond, leaves[base + offset])?;
                let h1 = tape.add_row_bias(h1, leaves[base + offset + 1])?;
                let h1 = tape.tanh(h1);
                let h2 = tape.matmul(h1, leaves[base + offset + 2])?;
                let h2 = tape.add_row_bias(h2, leaves[base + offset + 3])?;
                let h2 = tape.tanh(h2);
                let out = tape.matmul(h2, leaves[base + offset + 4])?;
                let out = tape.add_row_bias(out, leaves[base + offset + 5])?;
                Ok(if scaled {
                    tape.scaled_tanh(out, SCALE_CAP)
                } else {
                    out
                })
            };
            let s = net(tape, 0, true)?;
            let t = net(tape, 6, false)?;
            let exp_s = tape.exp(s);
            let scaled = tape.mul(trans, exp_s)?;
            let transformed = tape.add(scaled, t)?;
            let s_sum = tape.sum(s);
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, s_sum)?,
                None => s_sum,
            });
            if layer % 2 == 0 {
                half_b = transformed;
            } else {
                half_a = transformed;
            }
        }
        let sq_a = tape.mul(half_a, half_a)?;
        let sq_b = tape.mul(half_b, half_b)?;
        let sa = tape.sum(sq_a);
        let sb = tape.sum(sq_b);
        let sq = tape.add(sa, sb)?;
        let half_sq = tape.scale(sq, 0.5);
        let neg_det = tape.scale(log_det.expect("at least one coupling"), -1.0);
        Ok(tape.add(half_sq, neg_det)?)
    }

    fn loss_and_grads(&self, z_std: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let leaves = self.params.leaf_all(&mut tape);
        let loss = self.nll_core_on_tape(&mut tape, &leaves, z_std)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((
            value,
            leaves.iter().map(|&v| grads.wrt(v).clone()).collect(),
        ))
    }

    /// Fit by gradient descent on the mean negative log-likelihood of the
    /// given latents. Standardization statistics are (re)computed here and
    /// stored with the model.
    pub fn train(
        &mut self,
        latents: &[Vec<f64>],
        cfg: &FlowTrainConfig,
        seed: u64,
    ) -> Result<FlowTrainReport> {
        if latents.is_empty() {
            return Err(ModelError::Usage("no latents to fit".into()));
        }
        for z in latents {
            self.check_dim(z)?;
        }
        let n = latents.len() as f64;
        for d in 0..self.dim {
            let mean = latents.iter().map(|z| z[d]).sum::<f64>() / n;
            let var = latents.iter().map(|z| (z[d] - mean) * (z[d] - mean)).sum::<f64>() / n;
            self.norm_mean[d] = mean;
            self.norm_std[d] = var.sqrt().max(STD_FLOOR);
        }
        let standardized: Vec<Vec<f64>> = latents
            .iter()
            .map(|z| {
                z.iter()
                    .zip(self.norm_mean.iter().zip(&self.norm_std))
                    .map(|(&v, (&m, &s))| (v - m) / s)
                    .collect()
            })
            .collect();

        let mut order: Vec<usize> = (0..standardized.len()).collect();
        let mut shuffle_rng = seeds::rng(seeds::derive_seed(seed, 0));
        let batch = cfg.batch_size.max(1);
        let constant = self.nll_constant();
        let mut epoch_nll = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            for i in (1..order.len()).rev() {
                let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
                order.swap(i, j);
            }
            let mut loss_sum = 0.0;
            for chunk in order.chunks(batch) {
                let results: Vec<(f64, Vec<Tensor>)> = chunk
                    .par_iter()
                    .map(|&i| self.loss_and_grads(&standardized[i]))
                    .collect::<Result<Vec<_>>>()?;
                let mut summed = results[0].1.clone();
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
                crate::sequence::clip_global_norm(&mut summed, cfg.grad_clip);
                if cfg.lr != 0.0 {
                    sgd_step_all(&mut self.params, &summed, cfg.lr)?;
                }
                loss_sum += results.iter().map(|(l, _)| l).sum::<f64>();
            }
            let mean_nll = loss_sum / standardized.len() as f64 + constant;
            if !mean_nll.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            epoch_nll.push(mean_nll);
        }
        Ok(FlowTrainReport { epoch_nll })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = FlowCheckpointConfig {
            dim: self.dim,
            couplings: self.couplings,
            hidden_dim: self.hidden_dim,
        };
        let json = serde_json::to_string(&config)
            .map_err(|e| ModelError::Usage(format!("config serialization failed: {e}")))?;
        let mut params: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        let mean = Tensor::from_vec(&[self.dim], self.norm_mean.clone()).unwrap();
        let std = Tensor::from_vec(&[self.dim], self.norm_std.clone()).unwrap();
        params.push(("norm.mean".to_string(), &mean));
        params.push(("norm.std".to_string(), &std));
        write_checkpoint(path, &json, &params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (json, entries) = read_checkpoint(path)?;
        let config: FlowCheckpointConfig = serde_json::from_str(&json)
            .map_err(|e| ModelError::Usage(format!("bad flow checkpoint config: {e}")))?;
        let mut fresh = FlowModel::new(config.dim, config.couplings, config.hidden_dim, 0)?;
        let expected: Vec<String> = fresh.params.iter().map(|(n, _)| n.to_string()).collect();
        if entries.len() != expected.len() + 2 {
            return Err(ModelError::Usage(format!(
                "flow checkpoint has {} entries, expected {}",
                entries.len(),
                expected.len() + 2
            )));
        }
        let mut params = ParamSet::new();
        for ((name, tensor), want) in entries.iter().take(expected.len()).zip(&expected) {
            if name != want {
                return Err(ModelError::Usage(format!(
                    "flow checkpoint parameter {name} where {want} was expected"
                )));
            }
            params.insert(name, tensor.clone());
        }
        let mean = &entries[expected.len()];
        let std = &entries[expected.len() + 1];
        if mean.0 != "norm.mean" || std.0 != "norm.std" {
            return Err(ModelError::Usage("flow checkpoint missing norm stats".into()));
        }
        fresh.params = params;
        fresh.norm_mean = mean.1.data().to_vec();
        fresh.norm_std = std.1.data().to_vec();
        Ok(fresh)
    }
}

fn affine(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = w.dims2();
    debug_assert_eq!(rows, input.len());
    let mut out = b.data().to_vec();
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let wrow = w.row(i);
        for j in 0..cols {
            out[j] += x * wrow[j];
        }
    }
    out
}

fn affine_tanh(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = affine(input, w, b);
    for v in &mut out {
        *v = v.tanh();
    }
    out
}
