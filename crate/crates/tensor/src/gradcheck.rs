//! Central finite-difference verification of graph gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} over {} elements, max rel {:.3e}, max abs {:.3e} (tol {:.1e})",
            self.op,
            if self.passed { "ok" } else { "FAILED" },
            self.checked,
            self.max_rel_error,
            self.max_abs_error,
            self.tolerance
        )
    }
}

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.value(root).item()
}

/// Check `∂f/∂x` for a single-input scalar function over every element of `x`.
pub fn finite_diff_check<F>(op: &str, f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    finite_diff_check_many(
        op,
        |g, vars| f(g, vars[0]),
        std::slice::from_ref(x),
        None,
        h,
        tol,
    )
}

/// Check a scalar function of several inputs.
///
/// `probes` lists `(input, element)` pairs to perturb; `None` checks every
/// element of every input.
pub fn finite_diff_check_many<F>(
    op: &str,
    f: F,
    inputs: &[Tensor<f64>],
    probes: Option<&[(usize, usize)]>,
    h: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(TensorError::Contract(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let base = evaluate(&f, inputs)?;
    if evaluate(&f, inputs)?.to_bits() != base.to_bits() {
        return Err(TensorError::Contract(format!(
            "{op}: function is not deterministic"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape()).expect("shape is valid"))
        })
        .collect();

    let all: Vec<(usize, usize)>;
    let probes = match probes {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for &(i, e) in probes {
        if i >= inputs.len() || e >= inputs[i].numel() {
            return Err(TensorError::Contract(format!(
                "probe ({i}, {e}) is out of range"
            )));
        }
        let orig = inputs[i].data()[e];
        work[i].data_mut()[e] = orig + h;
        let plus = evaluate(&f, &work)?;
        work[i].data_mut()[e] = orig - h;
        let minus = evaluate(&f, &work)?;
        work[i].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i].data()[e];
        max_abs = max_abs.max((a - numeric).abs());
        max_rel = max_rel.max(relative_error(a, numeric));
    }
    Ok(GradReport {
        op: op.to_string(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked: probes.len(),
        tolerance: tol,
        passed: max_rel <= tol,
    })
}
