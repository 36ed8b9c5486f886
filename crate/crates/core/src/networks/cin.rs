use arst_tensor::{Graph, Scalar, Var};

use crate::error::{Error, Result};

/// Variance epsilon of every conditional instance normalization.
pub const CIN_EPS: f64 = 1e-5;

/// Conditional instance normalization.
///
/// Per `(n, c)`: `z = γ·(x − μ)/sqrt(σ² + eps) + β`, with `μ, σ²` taken over
/// the spatial axes of `x: N×C×H×W` and `gamma, beta: N×C` supplied by the
/// caller.
pub fn cin<S: Scalar>(g: &mut Graph<S>, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!(
            "cin eps must be positive, got {eps}"
        )));
    }
    Ok(g.instance_norm(x, gamma, beta, S::from_f64_lossy(eps))?)
}
