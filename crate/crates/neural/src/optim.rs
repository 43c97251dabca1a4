//! Plain stochastic gradient descent.

use crate::error::{NeuralError, Result};
use crate::layers::ParamSet;
use crate::tensor::Tensor;

/// `p <- p - lr * g`, elementwise.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(NeuralError::Shape(format!(
            "sgd shapes differ: {:?} vs {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if !(lr > 0.0) {
        return Err(NeuralError::Config(format!("lr must be positive, got {lr}")));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Apply one step to a full parameter set; gradients are given in parameter
/// order.
pub fn sgd_step_all(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(NeuralError::Shape(format!(
            "got {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((_, param), grad) in params.iter_mut().zip(grads.iter()) {
        sgd_step(param, grad, lr)?;
    }
    Ok(())
}
