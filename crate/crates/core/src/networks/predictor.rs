//! Fully connected network mapping the style weights to every `(γ, β)` of
//! the stylizer.
//!
//! Layout: input dense `|S| → width`, `hidden_layers` dense `width → width`,
//! and a linear head `width → 2·Σ channels` whose first half holds the γ
//! group and second half the β group, both in site order. ReLU follows the
//! input layer and every hidden layer.

use arst_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::norm_params::{NormParams, NormSite, NormVars, SiteParams};
use super::params::{gaussian, ParamStore};
use crate::error::{Error, Result};
use crate::losses::STYLE_LAYERS;

/// γ is predicted as an offset from this value, so a freshly initialized
/// predictor yields plain instance normalization instead of zeroing every
/// activation.
pub const GAMMA_OFFSET: f64 = 1.0;

/// Weight initialization of the dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorInit {
    /// Every layer uses the configured isotropic deviation.
    Isotropic,
    /// `sqrt(2 / fan_in)` for the input and hidden layers, the configured
    /// deviation for the head. Keeps the α signal alive through a deep ReLU
    /// stack while starting γ near 1 and β near 0.
    #[default]
    He,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub width: usize,
    pub hidden_layers: usize,
    #[serde(default)]
    pub init: PredictorInit,
}

impl PredictorConfig {
    /// 1000 units, 10 hidden layers.
    pub fn full() -> Self {
        Self {
            width: 1000,
            hidden_layers: 10,
            init: PredictorInit::He,
        }
    }

    pub fn toy() -> Self {
        Self {
            width: 6,
            hidden_layers: 2,
            init: PredictorInit::He,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<S> {
    pub config: PredictorConfig,
    pub sites: Vec<NormSite>,
    pub params: ParamStore<S>,
}

fn layer_shapes(config: &PredictorConfig, sites: &[NormSite]) -> Vec<(String, usize, usize)> {
    let out: usize = 2 * sites.iter().map(|s| s.channels).sum::<usize>();
    let mut layers = vec![("input".to_string(), STYLE_LAYERS.len(), config.width)];
    for i in 0..config.hidden_layers {
        layers.push((format!("hidden{i}"), config.width, config.width));
    }
    layers.push(("head".to_string(), config.width, out));
    layers
}

impl<S: Scalar> Predictor<S> {
    pub fn init(
        config: PredictorConfig,
        sites: Vec<NormSite>,
        stddev: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParamStore::default();
        for (name, i, o) in layer_shapes(&config, &sites) {
            let sd = match config.init {
                PredictorInit::He if name != "head" => (2.0 / i as f64).sqrt(),
                _ => stddev,
            };
            params.push(format!("{name}.weight"), gaussian(&[i, o], sd, rng)?);
            params.push(format!("{name}.bias"), Tensor::zeros(&[o])?);
        }
        Ok(Self {
            config,
            sites,
            params,
        })
    }

    pub fn from_params(
        config: PredictorConfig,
        sites: Vec<NormSite>,
        params: ParamStore<S>,
    ) -> Result<Self> {
        let layers = layer_shapes(&config, &sites);
        if params.len() != 2 * layers.len() {
            return Err(Error::Format(format!(
                "predictor expects {} tensors, found {}",
                2 * layers.len(),
                params.len()
            )));
        }
        for (j, (name, i, o)) in layers.iter().enumerate() {
            if params.tensor(2 * j).shape() != [*i, *o] || params.tensor(2 * j + 1).shape() != [*o]
            {
                return Err(Error::Format(format!(
                    "predictor layer {name} has unexpected shape"
                )));
            }
        }
        Ok(Self {
            config,
            sites,
            params,
        })
    }

    /// Total `(γ, β)` scalars produced: `2·Σ channels`.
    pub fn output_len(&self) -> usize {
        2 * self.sites.iter().map(|s| s.channels).sum::<usize>()
    }

    fn check_alpha(alpha_s: &[f64]) -> Result<()> {
        if alpha_s.len() != STYLE_LAYERS.len() {
            return Err(Error::Validation(format!(
                "predictor takes {} style weights, got {}",
                STYLE_LAYERS.len(),
                alpha_s.len()
            )));
        }
        if let Some(v) = alpha_s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "alpha value {v} is outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Raw head output `1 × 2Σ` on `g`.
    fn head(&self, g: &mut Graph<S>, vars: &[Var], alpha_s: &[f64]) -> Result<Var> {
        Self::check_alpha(alpha_s)?;
        let a = g.input(Tensor::from_vec(
            &[1, alpha_s.len()],
            alpha_s.iter().map(|&v| S::from_f64_lossy(v)).collect(),
        )?);
        let last = vars.len() / 2 - 1;
        let mut h = a;
        for layer in 0..=last {
            h = g.dense(h, vars[2 * layer], vars[2 * layer + 1])?;
            if layer != last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Build the prediction on `g`, broadcasting each `(γ, β)` over `batch`.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        vars: &[Var],
        alpha_s: &[f64],
        batch: usize,
    ) -> Result<NormVars> {
        let out = self.head(g, vars, alpha_s)?;
        let half = self.output_len() / 2;
        let offset = g.input(Tensor::scalar(S::from_f64_lossy(GAMMA_OFFSET)));
        let mut start = 0;
        let mut norm = Vec::with_capacity(self.sites.len());
        for site in &self.sites {
            let c = site.channels;
            let raw_gamma = g.narrow(out, 1, start, c)?;
            let raw_gamma = g.reshape(raw_gamma, &[c])?;
            let gamma = g.add(raw_gamma, offset)?;
            let beta = g.narrow(out, 1, half + start, c)?;
            let beta = g.reshape(beta, &[c])?;
            norm.push((
                g.broadcast(gamma, &[0], &[batch, c])?,
                g.broadcast(beta, &[0], &[batch, c])?,
            ));
            start += c;
        }
        Ok(norm)
    }

    /// Evaluate the predictor for one α_s.
    pub fn predict(&self, alpha_s: &[f64]) -> Result<NormParams<S>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let out = self.head(&mut g, &vars, alpha_s)?;
        let data = g.value(out).data();
        let half = self.output_len() / 2;
        let offset = S::from_f64_lossy(GAMMA_OFFSET);
        let mut start = 0;
        let sites = self
            .sites
            .iter()
            .map(|site| {
                let c = site.channels;
                let p = SiteParams {
                    gamma: data[start..start + c].iter().map(|&v| v + offset).collect(),
                    beta: data[half + start..half + start + c].to_vec(),
                };
                start += c;
                p
            })
            .collect();
        Ok(NormParams { sites })
    }
}
