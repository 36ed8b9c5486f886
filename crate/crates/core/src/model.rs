//! The stylizer, its predictor and the frozen loss network bundled together.

use arst_tensor::{Graph, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::losses::{
    content_layer_loss, gram_value, style_layer_loss, total_loss, AlphaVector, StyleTargets,
    CONTENT_LAYERS, STYLE_LAYERS,
};
use crate::networks::{FeatureExtractor, Predictor, Stylizer};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub stylizer: Stylizer<S>,
    pub predictor: Predictor<S>,
    pub extractor: FeatureExtractor<S>,
    pub targets: StyleTargets<S>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct LayerLosses {
    pub output: Var,
    /// Raw losses: content layers first, then style layers.
    pub raw: Vec<Var>,
}

impl LayerLosses {
    pub fn values<S: Scalar>(&self, g: &Graph<S>) -> Vec<f64> {
        self.raw
            .iter()
            .map(|&v| g.value(v).data()[0].to_f64_lossy())
            .collect()
    }
}

/// Gram matrix of the style image at every style layer.
pub fn precompute_style_grams<S: Scalar>(
    style: &Tensor<S>,
    extractor: &FeatureExtractor<S>,
) -> Result<StyleTargets<S>> {
    if style.rank() != 4 || style.shape()[0] != 1 {
        return Err(Error::Validation(format!(
            "style image must be 1×3×H×W, got {:?}",
            style.shape()
        )));
    }
    let feats = extractor.extract_values(style)?;
    let grams = STYLE_LAYERS
        .iter()
        .map(|layer| {
            let (_, f) = feats
                .iter()
                .find(|(n, _)| n == layer)
                .ok_or_else(|| Error::Validation(format!("extractor has no tap {layer}")))?;
            let g = gram_value(f)?;
            let c = g.shape()[1];
            Ok(g.reshape(&[c, c])?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StyleTargets { grams })
}

impl<S: Scalar> Model<S> {
    /// Stylizer and predictor parameters, stylizer first.
    pub fn trainable(&self) -> impl Iterator<Item = &Tensor<S>> {
        let s = &self.stylizer.params;
        let p = &self.predictor.params;
        (0..s.len())
            .map(move |i| s.tensor(i))
            .chain((0..p.len()).map(move |i| p.tensor(i)))
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.stylizer
            .params
            .tensors_mut()
            .chain(self.predictor.params.tensors_mut())
            .collect()
    }

    /// Bind all trainable parameters on `g`: stylizer vars, predictor vars.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> (Vec<Var>, Vec<Var>) {
        (
            self.stylizer.params.bind(g, trainable),
            self.predictor.params.bind(g, trainable),
        )
    }

    /// Stylize `content` under `alpha_s` and attach every raw layer loss.
    pub fn layer_losses(
        &self,
        g: &mut Graph<S>,
        vars: &(Vec<Var>, Vec<Var>),
        content: Var,
        alpha_s: &[f64],
    ) -> Result<LayerLosses> {
        let batch = g.shape(content)[0];
        let norm = self.predictor.forward(g, &vars.1, alpha_s, batch)?;
        let output = self.stylizer.forward(g, &vars.0, content, &norm)?;
        let raw = self.losses_of(g, output, content)?;
        Ok(LayerLosses { output, raw })
    }

    /// Raw content and style losses of `output` against `content`.
    pub fn losses_of(&self, g: &mut Graph<S>, output: Var, content: Var) -> Result<Vec<Var>> {
        let pf = self.extractor.extract(g, output)?;
        let cf = self.extractor.extract(g, content)?;
        let mut raw = Vec::with_capacity(CONTENT_LAYERS.len() + STYLE_LAYERS.len());
        for layer in CONTENT_LAYERS {
            raw.push(content_layer_loss(g, pf.get(layer)?, cf.get(layer)?)?);
        }
        for (layer, target) in STYLE_LAYERS.iter().zip(&self.targets.grams) {
            let t = g.input(target.clone());
            raw.push(style_layer_loss(g, pf.get(layer)?, t)?);
        }
        Ok(raw)
    }

    /// `Σ α·factor·L` with `factors` treated as constants.
    pub fn weighted_total(
        &self,
        g: &mut Graph<S>,
        losses: &LayerLosses,
        factors: &[f64],
        alpha: &AlphaVector,
    ) -> Result<Var> {
        if factors.len() != losses.raw.len() {
            return Err(Error::Validation(format!(
                "{} factors for {} losses",
                factors.len(),
                losses.raw.len()
            )));
        }
        let normalized = losses
            .raw
            .iter()
            .zip(factors)
            .map(|(&l, &f)| Ok(g.scale(l, S::from_f64_lossy(f))?))
            .collect::<Result<Vec<_>>>()?;
        let nc = CONTENT_LAYERS.len();
        total_loss(g, &normalized[..nc], &normalized[nc..], alpha)
    }

    /// Stylize a batch with the given style weights.
    pub fn stylize(&self, content: &Tensor<S>, alpha_s: &[f64]) -> Result<Tensor<S>> {
        let params = self.predictor.predict(alpha_s)?;
        self.stylizer.stylize(content, &params)
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            stylizer: Stylizer {
                config: self.stylizer.config.clone(),
                params: self.stylizer.params.cast(),
            },
            predictor: Predictor {
                config: self.predictor.config.clone(),
                sites: self.predictor.sites.clone(),
                params: self.predictor.params.cast(),
            },
            extractor: self.extractor.cast(),
            targets: self.targets.cast(),
        }
    }
}
