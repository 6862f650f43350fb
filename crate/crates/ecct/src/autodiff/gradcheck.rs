//! Central-finite-difference verification of the backward pass.

use super::{AdError, Graph, Scalar, Tensor, Var};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients of a scalar loss against central differences
/// in `f64`. `build` must construct the same computation each call from the
/// given parameter leaves; up to `max_coords` coordinates are sampled
/// uniformly across all parameter elements.
///
/// Relative error per coordinate: `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(
    build: F,
    params: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AdError>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64, AdError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &vars)?;
        if g.value(loss).numel() != 1 {
            return Err(AdError::NotScalar);
        }
        Ok(g.value(loss).item())
    };

    // Analytic gradients from a single backward pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v)).collect();

    let total: usize = params.iter().map(Tensor::numel).sum();
    let coords = max_coords.min(total);
    let mut max_rel_err = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for _ in 0..coords {
        let mut flat = rng.next_index(total);
        let mut slot = 0;
        while flat >= work[slot].numel() {
            flat -= work[slot].numel();
            slot += 1;
        }
        let orig = work[slot].data()[flat];
        work[slot].data_mut()[flat] = orig + eps;
        let f_plus = eval(&work)?;
        work[slot].data_mut()[flat] = orig - eps;
        let f_minus = eval(&work)?;
        work[slot].data_mut()[flat] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[slot].data()[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > max_rel_err {
            max_rel_err = rel;
        }
    }
    Ok(GradCheckReport { max_rel_err, coords_checked: coords })
}

/// Convenience wrapper filling tensors with `U(-1, 1)` entries.
pub fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut RngStream) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of_f64(rng.next_uniform_sym(1.0))).collect())
}
