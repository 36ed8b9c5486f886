use arst_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One conditional instance normalization site of the stylizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormSite {
    pub name: String,
    pub channels: usize,
}

/// Per-site, per-channel `(γ, β)` values in stylizer site order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<S> {
    pub sites: Vec<SiteParams<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteParams<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

/// Graph handles of `(γ, β)` per site, each `N×C`.
pub type NormVars = Vec<(Var, Var)>;

impl<S: Scalar> NormParams<S> {
    /// γ = 1, β = 0 everywhere: plain instance normalization.
    pub fn identity(sites: &[NormSite]) -> Self {
        Self {
            sites: sites
                .iter()
                .map(|s| SiteParams {
                    gamma: vec![S::one(); s.channels],
                    beta: vec![S::zero(); s.channels],
                })
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.sites
            .iter()
            .map(|s| s.gamma.len() + s.beta.len())
            .sum()
    }

    pub fn check_sites(&self, sites: &[NormSite]) -> Result<()> {
        let ok = self.sites.len() == sites.len()
            && self
                .sites
                .iter()
                .zip(sites)
                .all(|(p, s)| p.gamma.len() == s.channels && p.beta.len() == s.channels);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(
                "normalization parameters do not match the stylizer sites".into(),
            ))
        }
    }

    /// Record the values as constants broadcast over a batch of `batch`.
    pub fn bind(&self, g: &mut Graph<S>, batch: usize) -> Result<NormVars> {
        self.sites
            .iter()
            .map(|site| {
                let c = site.gamma.len();
                let gamma = g.input(Tensor::from_vec(&[c], site.gamma.clone())?);
                let beta = g.input(Tensor::from_vec(&[c], site.beta.clone())?);
                Ok((
                    g.broadcast(gamma, &[0], &[batch, c])?,
                    g.broadcast(beta, &[0], &[batch, c])?,
                ))
            })
            .collect()
    }

    /// Largest absolute difference over all scalars.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sites
            .iter()
            .zip(&other.sites)
            .flat_map(|(a, b)| {
                a.gamma
                    .iter()
                    .zip(&b.gamma)
                    .chain(a.beta.iter().zip(&b.beta))
            })
            .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}
