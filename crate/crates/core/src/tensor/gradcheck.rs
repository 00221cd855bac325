//! Finite-difference gradient verification.
//!
//! The checker is deliberately independent of the reverse-mode machinery:
//! it only ever calls the forward path, rebuilding the graph from scratch
//! for every perturbed input. Analytic gradients are compared against
//! central differences component by component with the relative error
//! `|a - n| / max(1, |a|, |n|)`.

use super::Tensor;
use crate::error::Result;

#[derive(Debug)]
pub struct GradCheckError {
    pub input: usize,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl std::fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradient mismatch at input {} component {}: analytic {:.6e}, numeric {:.6e}, rel err {:.3e}",
            self.input, self.component, self.analytic, self.numeric, self.rel_err
        )
    }
}

/// One scalar evaluation of `build` on fresh constant leaves, contracted
/// to a scalar with the fixed `weights` so non-scalar outputs are covered.
fn eval_scalar(
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[(Vec<usize>, Vec<f64>)],
    weights: &[f64],
) -> Result<f64> {
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::from_vec(data.clone(), shape))
        .collect::<Result<_>>()?;
    let out = build(&leaves)?;
    let w = Tensor::from_vec(weights[..out.numel()].to_vec(), out.shape())?;
    out.mul(&w)?.sum_all()?.item()
}

/// Central-difference gradient of the weighted scalar output with respect
/// to every component of every input.
pub fn numeric_grad(
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[(Vec<usize>, Vec<f64>)],
    weights: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let n = inputs[i].1.len();
        let mut gi = vec![0.0; n];
        for j in 0..n {
            let x = inputs[i].1[j];
            let eps = 1e-5 * x.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[i].1[j] = x + eps;
            let mut minus = inputs.to_vec();
            minus[i].1[j] = x - eps;
            let fp = eval_scalar(build, &plus, weights)?;
            let fm = eval_scalar(build, &minus, weights)?;
            gi[j] = (fp - fm) / (2.0 * eps);
        }
        grads.push(gi);
    }
    Ok(grads)
}

/// Check the reverse-mode gradients of `build` against central
/// differences. Returns the worst relative error seen, or the first
/// offending component if it exceeds `tol`.
///
/// `weights` contracts the op output to a scalar and must be at least as
/// long as the output; fixed, non-degenerate values (all non-zero) make
/// every output component influence the check.
pub fn gradcheck(
    build: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[(Vec<usize>, Vec<f64>)],
    weights: &[f64],
    tol: f64,
) -> std::result::Result<f64, Box<GradCheckError>> {
    let run = || -> Result<(Vec<Option<Vec<f64>>>, Vec<Vec<f64>>)> {
        let leaves: Vec<Tensor> = inputs
            .iter()
            .map(|(shape, data)| Tensor::param(data.clone(), shape))
            .collect::<Result<_>>()?;
        let out = build(&leaves)?;
        let w = Tensor::from_vec(weights[..out.numel()].to_vec(), out.shape())?;
        out.mul(&w)?.sum_all()?.backward()?;
        let analytic = leaves.iter().map(|l| l.grad()).collect();
        let numeric = numeric_grad(build, inputs, weights)?;
        Ok((analytic, numeric))
    };
    let (analytic, numeric) = run().expect("gradcheck forward/backward must not fail");

    let mut worst = 0.0f64;
    for (i, ni) in numeric.iter().enumerate() {
        let zero = vec![0.0; ni.len()];
        let ai = analytic[i].as_deref().unwrap_or(&zero);
        for (j, (&a, &n)) in ai.iter().zip(ni).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
            if rel > tol {
                return Err(Box::new(GradCheckError {
                    input: i,
                    component: j,
                    analytic: a,
                    numeric: n,
                    rel_err: rel,
                }));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
