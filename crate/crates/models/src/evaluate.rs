//! Downstream evaluation: pairwise preference over design sequences and the
//! per-timestep Frechet distance between latent populations.

use rayon::prelude::*;

use massing_core::dataset::EpisodeRecord;
use massing_core::seeds;

use crate::error::{ModelError, Result};
use crate::flow::FlowModel;
use crate::pipeline::{corrupted_sample, record_to_sample};
use crate::sequence::{ModelKind, SequenceModel};

/// Sample mean and covariance of a latent population at one timestep.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major symmetric covariance with `eps` added on the diagonal.
    pub cov: Vec<f64>,
}

/// Diagonal regularization added to estimated covariances.
pub const COV_EPS: f64 = 1e-6;

pub fn gaussian_stats(samples: &[Vec<f64>], eps: f64) -> Result<GaussianStats> {
    if samples.len() < 2 {
        return Err(ModelError::Statistics {
            needed: 2,
            got: samples.len(),
        });
    }
    let dim = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; dim * dim];
    for s in samples {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[i * dim + j] += di * (s[j] - mean[j]);
            }
        }
    }
    let denom = n - 1.0;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
        cov[i * dim + i] += eps;
    }
    Ok(GaussianStats { dim, mean, cov })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns the
/// eigenvalues and the row-major matrix whose columns are eigenvectors.
pub fn sym_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = matrix
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

/// Principal square root of a symmetric positive semidefinite matrix via
/// eigendecomposition; negative eigenvalues are clipped at zero.
pub fn matrix_sqrt_psd(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    if matrix.len() != n * n {
        return Err(ModelError::Length {
            len: matrix.len(),
            max: n * n,
        });
    }
    let scale: f64 = matrix
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[i * n + j] - matrix[j * n + i]).abs() > 1e-8 * scale {
                return Err(ModelError::NotSymmetric);
            }
        }
    }
    let (values, vectors) = sym_eigen(matrix, n);
    let roots: Vec<f64> = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // S = V * diag(sqrt(l)) * V^T
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut sum = 0.0;
            for k in 0..n {
                sum += vectors[i * n + k] * roots[k] * vectors[j * n + k];
            }
            out[i * n + j] = sum;
            out[j * n + i] = sum;
        }
    }
    Ok(out)
}

fn trace(m: &[f64], n: usize) -> f64 {
    (0..n).map(|i| m[i * n + i]).sum()
}

fn matmul_square(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Frechet distance between two Gaussian summaries, with the mean term kept
/// non-squared and the cross term evaluated in its symmetric form
/// `sqrt(sqrt(C1) C2 sqrt(C1))`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(ModelError::Length {
            len: b.dim,
            max: a.dim,
        });
    }
    let n = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let root_a = matrix_sqrt_psd(&a.cov, n)?;
    let inner = matmul_square(&root_a, &matmul_square(&b.cov, &root_a, n), n);
    // Symmetrize away multiplication rounding before the second root.
    let mut inner_sym = inner.clone();
    for i in 0..n {
        for j in 0..n {
            inner_sym[i * n + j] = 0.5 * (inner[i * n + j] + inner[j * n + i]);
        }
    }
    let cross = matrix_sqrt_psd(&inner_sym, n)?;
    Ok(mean_term + trace(&a.cov, n) + trace(&b.cov, n) - 2.0 * trace(&cross, n))
}

/// Per-timestep Frechet distance between reference and candidate latent
/// populations. Index t holds every population's latent vectors at step t.
pub fn sequential_fid(
    reference_by_t: &[Vec<Vec<f64>>],
    candidate_by_t: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>> {
    let steps = reference_by_t.len().min(candidate_by_t.len());
    (0..steps)
        .into_par_iter()
        .map(|t| {
            let reference = gaussian_stats(&reference_by_t[t], COV_EPS)?;
            let candidate = gaussian_stats(&candidate_by_t[t], COV_EPS)?;
            frechet_distance(&reference, &candidate)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone)]
pub struct PreferenceVerdict {
    pub winner: Winner,
    pub scores: (f64, f64),
}

impl PreferenceVerdict {
    /// Higher score wins; exact equality is a tie.
    fn higher_wins(scores: (f64, f64)) -> Self {
        let winner = if scores.0 > scores.1 {
            Winner::First
        } else if scores.1 > scores.0 {
            Winner::Second
        } else {
            Winner::Tie
        };
        Self { winner, scores }
    }

    /// Lower score wins; exact equality is a tie.
    fn lower_wins(scores: (f64, f64)) -> Self {
        let winner = if scores.0 < scores.1 {
            Winner::First
        } else if scores.1 < scores.0 {
            Winner::Second
        } else {
            Winner::Tie
        };
        Self { winner, scores }
    }
}

/// Compare two sequences by flow log-likelihood of their final latents,
/// extracted through a frozen encoder.
pub fn flow_preference(
    encoder: &SequenceModel,
    flow: &FlowModel,
    a: &massing_neural::Tensor,
    b: &massing_neural::Tensor,
) -> Result<PreferenceVerdict> {
    let za = encoder.final_latent(a)?;
    let zb = encoder.final_latent(b)?;
    let scores = (flow.log_prob(&za)?, flow.log_prob(&zb)?);
    Ok(PreferenceVerdict::higher_wins(scores))
}

/// Baseline: compare by distance between the final posterior mean and the
/// prior mean; the smaller distance is preferred.
pub fn vae_preference(
    vae: &SequenceModel,
    a: &massing_neural::Tensor,
    b: &massing_neural::Tensor,
) -> Result<PreferenceVerdict> {
    let scores = (vae.vae_latent_distance(a)?, vae.vae_latent_distance(b)?);
    Ok(PreferenceVerdict::lower_wins(scores))
}

/// Which scorer drives a preference experiment.
pub enum Judge<'a> {
    Flow(&'a SequenceModel, &'a FlowModel),
    Vae(&'a SequenceModel),
}

impl Judge<'_> {
    fn verdict(
        &self,
        a: &massing_neural::Tensor,
        b: &massing_neural::Tensor,
    ) -> Result<PreferenceVerdict> {
        match self {
            Judge::Flow(encoder, flow) => flow_preference(encoder, flow, a, b),
            Judge::Vae(vae) => {
                if vae.kind != ModelKind::Vae {
                    return Err(ModelError::Kind {
                        expected: "vae",
                        actual: vae.kind.as_str().to_string(),
                    });
                }
                vae_preference(vae, a, b)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreferencePoint {
    /// Fraction of the expert trace kept before switching to random play.
    pub h_fraction: f64,
    /// Share of pairs where the expert sequence was preferred; ties count
    /// half.
    pub accuracy: f64,
}

/// For each corruption level, pit every evaluation sequence against its
/// corrupted counterpart and report how often the expert wins.
pub fn preference_experiment(
    judge: &Judge,
    eval_records: &[EpisodeRecord],
    h_fractions: &[f64],
    max_len: usize,
    seed: u64,
) -> Result<Vec<PreferencePoint>> {
    if eval_records.is_empty() {
        return Err(ModelError::Usage("no evaluation sequences".into()));
    }
    let expert_samples: Vec<_> = eval_records
        .par_iter()
        .map(|r| record_to_sample(r, max_len))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(h_fractions.len());
    for (level, &fraction) in h_fractions.iter().enumerate() {
        let credits: Vec<f64> = eval_records
            .par_iter()
            .zip(&expert_samples)
            .enumerate()
            .map(|(idx, (record, expert))| -> Result<f64> {
                let corruption_seed =
                    seeds::derive_seed(seeds::derive_seed(seed, level as u64), idx as u64);
                let corrupted = corrupted_sample(record, fraction, corruption_seed, max_len)?;
                let verdict = judge.verdict(&expert.embeddings, &corrupted.embeddings)?;
                Ok(match verdict.winner {
                    Winner::First => 1.0,
                    Winner::Tie => 0.5,
                    Winner::Second => 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let accuracy = credits.iter().sum::<f64>() / credits.len() as f64;
        points.push(PreferencePoint {
            h_fraction: fraction,
            accuracy,
        });
    }
    Ok(points)
}
