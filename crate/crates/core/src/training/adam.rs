use arst_tensor::{Scalar, Tensor};

use super::config::AdamConfig;
use crate::error::{Error, Result};

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let (m, v) = shapes
            .into_iter()
            .map(|s| Ok((Tensor::zeros(s)?, Tensor::zeros(s)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { t: 0, m, v })
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
///
/// All gradients are checked before anything is modified, so a rejected
/// step leaves parameters and state untouched.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    hyper: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Validation(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Validation(format!(
                "parameter {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let t = state.t + 1;
    let c1 = 1.0 - hyper.beta1.powi(t as i32);
    let c2 = 1.0 - hyper.beta2.powi(t as i32);
    let k = Coefficients {
        b1: S::from_f64_lossy(hyper.beta1),
        b2: S::from_f64_lossy(hyper.beta2),
        step: S::from_f64_lossy(hyper.lr / c1),
        inv_c2: S::from_f64_lossy(1.0 / c2),
        eps: S::from_f64_lossy(hyper.eps),
    };
    // Dry run first: a step that would produce a non-finite value is
    // rejected before anything is written.
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for (j, (&pj, &gj)) in p.data().iter().zip(g.data()).enumerate() {
            if !gj.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient of parameter {i} is {gj} at element {j}"
                )));
            }
            let (_, _, np) = k.update(pj, gj, m[j], v[j]);
            if !np.is_finite() {
                return Err(Error::Numeric(format!(
                    "update of parameter {i} overflows at element {j}"
                )));
            }
        }
    }
    state.t = t;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            (md[j], vd[j], pd[j]) = k.update(pd[j], gj, md[j], vd[j]);
        }
    }
    Ok(())
}

struct Coefficients<S> {
    b1: S,
    b2: S,
    step: S,
    inv_c2: S,
    eps: S,
}

impl<S: Scalar> Coefficients<S> {
    /// New `(m, v, p)` for one element.
    #[inline(always)]
    fn update(&self, p: S, g: S, m: S, v: S) -> (S, S, S) {
        let one = S::one();
        let m = self.b1 * m + (one - self.b1) * g;
        let v = self.b2 * v + (one - self.b2) * g * g;
        // With eps = 0 a zero moment pair gives 0 / tiny = 0.
        let denom = ((v * self.inv_c2).sqrt() + self.eps).max(S::min_positive_value());
        (m, v, p - self.step * m / denom)
    }
}
