//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The surface is deliberately small: matrix product, elementwise
//! add/sub/mul (plus bias broadcast over a batch), ReLU, column
//! concatenation, sum, MSE and softmax cross-entropy. That is enough to
//! train dense MLPs and to differentiate a loss with respect to its input.

mod tape;
mod tensor;

pub use tape::{Elementwise, Reduction, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// `p ← p − lr·grad(p)` for every parameter, then clears the gradients.
///
/// Every parameter must carry a gradient; `lr` must be non-negative.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Domain(format!("learning rate {lr} must be >= 0")));
    }
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::Usage(format!("parameter {i} has no gradient")));
    }
    for p in params.iter_mut() {
        let g = p.take_grad().expect("checked above");
        p.data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(w, d)| *w -= lr * d);
    }
    Ok(())
}
