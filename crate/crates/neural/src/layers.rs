//! Parameter bookkeeping and the building blocks shared by the sequence
//! models: sinusoidal positional encoding and the pre-norm causal
//! self-attention block (attention + feed-forward, each with a residual).

use rand::Rng;

use crate::error::{NeuralError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named parameters, in insertion order. Order is the checkpoint and
/// optimizer order, so it must be construction-deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.entries.iter().any(|(n, _)| n == name),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Leaf every parameter onto a tape, preserving order.
    pub fn leaf_all(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }
}

/// Fixed sinusoidal positional table: even columns sine, odd columns cosine.
pub fn positional_encoding(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for t in 0..positions {
        for i in 0..dim.div_ceil(2) {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = t as f64 * freq;
            data[t * dim + 2 * i] = angle.sin();
            if 2 * i + 1 < dim {
                data[t * dim + 2 * i + 1] = angle.cos();
            }
        }
    }
    Tensor::from_vec(&[positions, dim], data).expect("shape matches data")
}

/// Tape handles for one pre-norm block.
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

/// Parameter names for block `index`, in leaf order.
pub fn block_param_names(index: usize) -> Vec<String> {
    [
        "ln1.gain", "ln1.bias", "wq", "wk", "wv", "wo", "ln2.gain", "ln2.bias", "ff.w1", "ff.b1",
        "ff.w2", "ff.b2",
    ]
    .iter()
    .map(|suffix| format!("block{index}.{suffix}"))
    .collect()
}

/// Initialize one block's parameters: fan-in scaled uniform weights, unit
/// norm gains, zero biases. Feed-forward width is 4x the model width.
pub fn init_block_params(params: &mut ParamSet, index: usize, dim: usize, rng: &mut impl Rng) {
    let ff = 4 * dim;
    let names = block_param_names(index);
    let mut push = |name: &str, tensor: Tensor| params.insert(name, tensor);
    push(&names[0], Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap());
    push(&names[1], Tensor::zeros(&[dim]));
    for name in &names[2..6] {
        push(name, Tensor::uniform_init(&[dim, dim], dim, rng));
    }
    push(&names[6], Tensor::from_vec(&[dim], vec![1.0; dim]).unwrap());
    push(&names[7], Tensor::zeros(&[dim]));
    push(&names[8], Tensor::uniform_init(&[dim, ff], dim, rng));
    push(&names[9], Tensor::zeros(&[ff]));
    push(&names[10], Tensor::uniform_init(&[ff, dim], ff, rng));
    push(&names[11], Tensor::zeros(&[dim]));
}

/// One causal self-attention block: pre-norm multi-head attention and a
/// pre-norm GELU feed-forward, each wrapped in a residual connection.
pub fn causal_block(tape: &mut Tape, x: Var, vars: &BlockVars, heads: usize) -> Result<Var> {
    let normed = tape.layer_norm(x, vars.ln1_gain, vars.ln1_bias)?;
    let q = tape.matmul(normed, vars.wq)?;
    let k = tape.matmul(normed, vars.wk)?;
    let v = tape.matmul(normed, vars.wv)?;
    let attended = tape.causal_attention(q, k, v, heads)?;
    let projected = tape.matmul(attended, vars.wo)?;
    let x = tape.add(x, projected)?;

    let normed = tape.layer_norm(x, vars.ln2_gain, vars.ln2_bias)?;
    let hidden = tape.matmul(normed, vars.ff_w1)?;
    let hidden = tape.add_row_bias(hidden, vars.ff_b1)?;
    let hidden = tape.gelu(hidden);
    let out = tape.matmul(hidden, vars.ff_w2)?;
    let out = tape.add_row_bias(out, vars.ff_b2)?;
    tape.add(x, out)
}

/// Attention stack geometry shared by every sequence model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub input_dim: usize,
    pub max_len: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            model_dim: 128,
            input_dim: 1000,
            max_len: 41,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.input_dim == 0 {
            return Err(NeuralError::Config("all dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(NeuralError::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_len == 0 {
            return Err(NeuralError::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}
