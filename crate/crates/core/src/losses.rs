//! Perceptual losses, α weighting, and moving-average loss balancing.
//!
//! Both per-layer losses use element-mean reduction and Gram matrices are
//! normalized by `C·H·W`, so loss magnitudes do not depend on resolution.

use arst_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature tap used by the content loss.
pub const CONTENT_LAYERS: [&str; 1] = ["conv3"];
/// Feature taps used by the style losses, shallow to deep.
pub const STYLE_LAYERS: [&str; 3] = ["conv2", "conv3", "conv4"];

/// Runtime loss weights: one per content layer and one per style layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub content: Vec<f64>,
    pub style: Vec<f64>,
}

impl AlphaVector {
    pub fn new(content: Vec<f64>, style: Vec<f64>) -> Result<Self> {
        if content.len() != CONTENT_LAYERS.len() || style.len() != STYLE_LAYERS.len() {
            return Err(Error::Validation(format!(
                "alpha needs {} content and {} style values, got {} and {}",
                CONTENT_LAYERS.len(),
                STYLE_LAYERS.len(),
                content.len(),
                style.len()
            )));
        }
        if let Some(v) = content
            .iter()
            .chain(&style)
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Validation(format!(
                "alpha value {v} is outside [0, 1]"
            )));
        }
        Ok(Self { content, style })
    }

    /// Content weight fixed at 1, style weights as given.
    pub fn with_style(style: &[f64]) -> Result<Self> {
        Self::new(vec![1.0; CONTENT_LAYERS.len()], style.to_vec())
    }

    pub fn zeros() -> Self {
        Self {
            content: vec![1.0; CONTENT_LAYERS.len()],
            style: vec![0.0; STYLE_LAYERS.len()],
        }
    }
}

/// Gram matrices of the style image at every style layer, each `C×C`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTargets<S> {
    pub grams: Vec<Tensor<S>>,
}

impl<S: Scalar> StyleTargets<S> {
    pub fn cast<T: Scalar>(&self) -> StyleTargets<T> {
        StyleTargets {
            grams: self.grams.iter().map(Tensor::cast).collect(),
        }
    }
}

/// `G[n,i,j] = Σ_hw F[n,i,h,w]·F[n,j,h,w] / (C·H·W)`.
pub fn gram<S: Scalar>(g: &mut Graph<S>, features: Var) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(Error::Validation(format!(
            "gram expects N×C×H×W features, got {shape:?}"
        )));
    }
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let flat = g.reshape(features, &[n, c, hw])?;
    let raw = g.matmul_nt(flat, flat)?;
    Ok(g.scale(raw, S::from_f64_lossy(1.0 / (c * hw) as f64))?)
}

/// Mean squared feature difference against the content features.
pub fn content_layer_loss<S: Scalar>(g: &mut Graph<S>, p_feat: Var, c_feat: Var) -> Result<Var> {
    let diff = g.sub(p_feat, c_feat)?;
    let sq = g.square(diff)?;
    Ok(g.mean_all(sq)?)
}

/// Mean squared Gram difference; `target` is `C×C` (shared by the batch) or `N×C×C`.
pub fn style_layer_loss<S: Scalar>(g: &mut Graph<S>, p_feat: Var, target: Var) -> Result<Var> {
    let gp = gram(g, p_feat)?;
    let gshape = g.shape(gp).to_vec();
    let target = if g.shape(target).len() == 2 && gshape.len() == 3 {
        g.broadcast(target, &[0], &gshape)?
    } else {
        target
    };
    let diff = g.sub(gp, target)?;
    let sq = g.square(diff)?;
    Ok(g.mean_all(sq)?)
}

/// Running averages used to rebalance per-layer losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub values: Vec<f64>,
    pub initialized: Vec<bool>,
}

/// Lower bound applied to every running average.
pub const EMA_FLOOR: f64 = 1e-12;

impl EmaState {
    pub fn new(layers: usize, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Validation(format!(
                "EMA decay {decay} must be inside (0, 1)"
            )));
        }
        Ok(Self {
            decay,
            values: vec![0.0; layers],
            initialized: vec![false; layers],
        })
    }

    /// `Σ_i L̄_i / L̄_l` for every layer, with the current averages.
    pub fn factors(&self) -> Result<Vec<f64>> {
        if self.initialized.iter().any(|i| !i) {
            return Err(Error::State(
                "EMA factors requested before every layer was observed".into(),
            ));
        }
        let total: f64 = self.values.iter().sum();
        Ok(self
            .values
            .iter()
            .map(|v| total / v.max(EMA_FLOOR))
            .collect())
    }
}

/// Balancing factors and normalized losses of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub factors: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Rescale raw per-layer losses by their running averages, then fold the
/// raw losses into the averages.
///
/// The first observation of a layer initializes its average to the raw value.
/// The factors are plain numbers: callers apply them as constants, so no
/// gradient reaches the averages.
pub fn ema_normalize(raw: &[f64], state: &mut EmaState) -> Result<Normalized> {
    if raw.len() != state.values.len() {
        return Err(Error::Validation(format!(
            "{} raw losses for an EMA over {} layers",
            raw.len(),
            state.values.len()
        )));
    }
    if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Numeric(format!(
            "raw loss {v} is not a finite nonnegative number"
        )));
    }
    for (i, &r) in raw.iter().enumerate() {
        if !state.initialized[i] {
            state.values[i] = r.max(EMA_FLOOR);
            state.initialized[i] = true;
        }
    }
    let factors = state.factors()?;
    let losses = factors.iter().zip(raw).map(|(f, r)| f * r).collect();
    let d = state.decay;
    for (avg, &r) in state.values.iter_mut().zip(raw) {
        *avg = (d * *avg + (1.0 - d) * r).max(EMA_FLOOR);
    }
    Ok(Normalized { factors, losses })
}

/// `Σ α_c·L_c + Σ α_s·L_s` over already-normalized per-layer loss nodes.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    content: &[Var],
    style: &[Var],
    alpha: &AlphaVector,
) -> Result<Var> {
    if content.len() != alpha.content.len() || style.len() != alpha.style.len() {
        return Err(Error::Validation(format!(
            "{} content / {} style losses for alpha of length {} / {}",
            content.len(),
            style.len(),
            alpha.content.len(),
            alpha.style.len()
        )));
    }
    AlphaVector::new(alpha.content.clone(), alpha.style.clone())?;
    let mut total = None;
    for (&loss, &a) in content
        .iter()
        .chain(style)
        .zip(alpha.content.iter().chain(&alpha.style))
    {
        let term = g.scale(loss, S::from_f64_lossy(a))?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::Validation("no loss terms".into()))
}

/// Evaluate the Gram matrix of a feature tensor outside of any training graph.
pub fn gram_value<S: Scalar>(features: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let f = g.input(features.clone());
    let out = gram(&mut g, f)?;
    Ok(g.value(out).clone())
}
