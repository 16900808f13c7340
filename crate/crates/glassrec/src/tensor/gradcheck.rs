//! Central finite-difference gradient verification.
//!
//! This module never touches the tape's analytic backward formulas: it
//! re-evaluates the forward computation at perturbed inputs, so it serves as
//! an independent oracle for them. Builders must be deterministic functions
//! of their inputs (no dropout in training mode, no RNG).

use super::{GradientTape, Tensor, TensorId};
use crate::error::{Error, Result};

/// Closure shape shared by the checking helpers: given a fresh tape and the
/// ids of the pushed inputs, build the computation and return the scalar
/// loss id.
pub type BuildFn = dyn Fn(&mut GradientTape, &[TensorId]) -> Result<TensorId>;

/// Step used for central differences. With `f64` losses of order one this
/// keeps the truncation and round-off error both far below the tolerances
/// asserted in the tests.
pub const STEP: f64 = 1e-5;

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut GradientTape, &[TensorId]) -> Result<TensorId> + ?Sized,
{
    let mut tape = GradientTape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::Contract(
            "gradient check target must be a scalar".into(),
        ));
    }
    Ok(tape.value(loss).data()[0])
}

/// Central-difference gradient of the built loss with respect to input
/// `which`, evaluated entry by entry.
pub fn fd_gradient<F>(inputs: &[Tensor], which: usize, build: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut GradientTape, &[TensorId]) -> Result<TensorId> + ?Sized,
{
    let mut grad = vec![0.0; inputs[which].numel()];
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..grad.len() {
        let original = work[which].data()[i];
        work[which].data_mut()[i] = original + STEP;
        let plus = evaluate(&work, build)?;
        work[which].data_mut()[i] = original - STEP;
        let minus = evaluate(&work, build)?;
        work[which].data_mut()[i] = original;
        grad[i] = (plus - minus) / (2.0 * STEP);
    }
    Ok(grad)
}

/// Run the analytic backward pass and compare every gradient entry of every
/// `requires_grad` input against central differences, returning the largest
/// relative error. The relative error uses a small absolute floor so that
/// near-zero gradients are compared on an absolute scale.
pub fn max_rel_error<F>(inputs: &[Tensor], build: F) -> Result<f64>
where
    F: Fn(&mut GradientTape, &[TensorId]) -> Result<TensorId>,
{
    let mut tape = GradientTape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        if !input.requires_gradient() {
            continue;
        }
        let analytic = tape.grad(ids[which])?.to_vec();
        let numeric = fd_gradient(inputs, which, &build)?;
        for (&a, &n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_matches_hand_derivative_of_square() {
        // f(x) = sum(x^2): df/dx = 2x.
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5])
            .unwrap()
            .requires_grad(true);
        let grad = fd_gradient(&[x], 0, &|t, ids| Ok(t.sum_sq(ids[0]))).unwrap();
        for (g, want) in grad.iter().zip([2.0, -4.0, 1.0]) {
            assert!((g - want).abs() < 1e-8, "{grad:?}");
        }
    }

    #[test]
    fn deliberately_wrong_gradient_is_caught() {
        // mul_scalar forward by 3 but compare against a loss built with 2:
        // the checker must report a large discrepancy, proving it does not
        // share code with the analytic path it validates.
        let x = Tensor::scalar(1.5).requires_grad(true);
        let analytic = {
            let mut tape = GradientTape::new();
            let id = tape.input(x.clone());
            let y = tape.mul_scalar(id, 3.0);
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
            tape.grad(id).unwrap()[0]
        };
        let numeric = fd_gradient(&[x], 0, &|t, ids| {
            let y = t.mul_scalar(ids[0], 2.0);
            Ok(t.sum(y))
        })
        .unwrap()[0];
        assert!((analytic - numeric).abs() > 0.5);
    }
}
