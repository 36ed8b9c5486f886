//! Style-weight sweeps over held-out content images.

use std::collections::HashMap;

use arst_tensor::{Graph, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CONTENT_LAYERS, STYLE_LAYERS};
use crate::model::Model;

/// Value held by the style weights that are not being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OthersMode {
    Zeros,
    Ones,
}

impl OthersMode {
    pub fn value(self) -> f64 {
        match self {
            OthersMode::Zeros => 0.0,
            OthersMode::Ones => 1.0,
        }
    }
}

pub const MIN_SWEEP_IMAGES: usize = 10;
pub const MIN_GRID_POINTS: usize = 5;
const CHUNK: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub layer: String,
    /// `(α, median normalized loss)` in ascending α.
    pub points: Vec<(f64, f64)>,
    pub spearman: f64,
}

impl LayerSweep {
    /// Median at α = 1 minus median at α = 0, when both are on the grid.
    pub fn endpoint_change(&self) -> Option<f64> {
        let at = |t: f64| self.points.iter().find(|(a, _)| *a == t).map(|(_, m)| *m);
        Some(at(1.0)? - at(0.0)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: OthersMode,
    pub layers: Vec<LayerSweep>,
}

/// Median normalized style loss per layer for a one-hot or zero α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotReport {
    pub baseline: Vec<f64>,
    /// `one_hot[j][l]`: medians with α_s = e_j.
    pub one_hot: Vec<Vec<f64>>,
    /// `reduction[j][l] = (baseline[l] − one_hot[j][l]) / baseline[l]`.
    pub reduction: Vec<Vec<f64>>,
}

impl OneHotReport {
    /// Whether weighting layer `j` alone reduces layer `j` the most.
    pub fn largest_at_own_layer(&self, j: usize) -> bool {
        let r = &self.reduction[j];
        r.iter().enumerate().all(|(l, &v)| l == j || r[j] > v)
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::Validation("median of an empty or NaN sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation; 0 when either side has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Raw per-image losses (content layers, then style layers) after
/// stylizing every image of `content` with `alpha_s`.
pub fn per_image_losses<S: Scalar>(
    model: &Model<S>,
    content: &Tensor<S>,
    alpha_s: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = content.shape()[0];
    let params = model.predictor.predict(alpha_s)?;
    let per = content.numel() / n;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let len = CHUNK.min(n - start);
        let mut shape = content.shape().to_vec();
        shape[0] = len;
        let chunk = Tensor::from_vec(
            &shape,
            content.data()[start * per..(start + len) * per].to_vec(),
        )?;
        let styled = model.stylizer.stylize(&chunk, &params)?;
        for i in 0..len {
            let mut one = shape.clone();
            one[0] = 1;
            let img = Tensor::from_vec(&one, styled.data()[i * per..(i + 1) * per].to_vec())?;
            let src = Tensor::from_vec(&one, chunk.data()[i * per..(i + 1) * per].to_vec())?;
            let mut g = Graph::new();
            let (p, c) = (g.input(img), g.input(src));
            let raw = model.losses_of(&mut g, p, c)?;
            out.push(
                raw.iter()
                    .map(|&v| g.value(v).data()[0].to_f64_lossy())
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Median normalized style loss at each style layer, memoized by α.
struct Medians<'a, S> {
    model: &'a Model<S>,
    content: &'a Tensor<S>,
    factors: &'a [f64],
    cache: HashMap<Vec<u64>, Vec<f64>>,
}

impl<S: Scalar> Medians<'_, S> {
    fn get(&mut self, alpha_s: &[f64]) -> Result<Vec<f64>> {
        let key: Vec<u64> = alpha_s.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let losses = per_image_losses(self.model, self.content, alpha_s)?;
        let nc = CONTENT_LAYERS.len();
        let medians = (0..STYLE_LAYERS.len())
            .map(|l| {
                let col: Vec<f64> = losses
                    .iter()
                    .map(|r| r[nc + l] * self.factors[nc + l])
                    .collect();
                median(&col)
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache.insert(key, medians.clone());
        Ok(medians)
    }
}

fn check_inputs<S: Scalar>(content: &Tensor<S>, factors: &[f64]) -> Result<()> {
    if content.rank() != 4 {
        return Err(Error::Validation(format!(
            "content must be N×3×H×W, got {:?}",
            content.shape()
        )));
    }
    if content.shape()[0] < MIN_SWEEP_IMAGES {
        return Err(Error::Validation(format!(
            "sweeps need at least {MIN_SWEEP_IMAGES} content images, got {}",
            content.shape()[0]
        )));
    }
    if factors.len() != CONTENT_LAYERS.len() + STYLE_LAYERS.len() {
        return Err(Error::Validation(format!(
            "{} normalization factors supplied",
            factors.len()
        )));
    }
    Ok(())
}

/// Sweep each style weight over `grid` with the others held per `mode`.
///
/// `factors` are the frozen normalization factors (see
/// [`crate::losses::EmaState::factors`]).
pub fn sweep_eval<S: Scalar>(
    model: &Model<S>,
    content: &Tensor<S>,
    factors: &[f64],
    grid: &[f64],
    modes: &[OthersMode],
) -> Result<Vec<SweepReport>> {
    check_inputs(content, factors)?;
    if grid.len() < MIN_GRID_POINTS {
        return Err(Error::Validation(format!(
            "grid needs at least {MIN_GRID_POINTS} points"
        )));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation(
            "grid must be strictly ascending within [0, 1]".into(),
        ));
    }
    let mut medians = Medians {
        model,
        content,
        factors,
        cache: HashMap::new(),
    };
    let mut reports = Vec::new();
    for &mode in modes {
        let mut layers = Vec::new();
        for (l, name) in STYLE_LAYERS.iter().enumerate() {
            let mut points = Vec::new();
            for &t in grid {
                let mut alpha = vec![mode.value(); STYLE_LAYERS.len()];
                alpha[l] = t;
                points.push((t, medians.get(&alpha)?[l]));
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
            layers.push(LayerSweep {
                layer: name.to_string(),
                spearman: spearman(&xs, &ys),
                points,
            });
        }
        reports.push(SweepReport { mode, layers });
    }
    Ok(reports)
}

/// Compare one-hot style weights against the all-zero baseline.
pub fn one_hot_eval<S: Scalar>(
    model: &Model<S>,
    content: &Tensor<S>,
    factors: &[f64],
) -> Result<OneHotReport> {
    check_inputs(content, factors)?;
    let mut medians = Medians {
        model,
        content,
        factors,
        cache: HashMap::new(),
    };
    let k = STYLE_LAYERS.len();
    let baseline = medians.get(&vec![0.0; k])?;
    let mut one_hot = Vec::new();
    let mut reduction = Vec::new();
    for j in 0..k {
        let mut alpha = vec![0.0; k];
        alpha[j] = 1.0;
        let m = medians.get(&alpha)?;
        reduction.push(
            m.iter()
                .zip(&baseline)
                .map(|(v, b)| (b - v) / b.max(f64::MIN_POSITIVE))
                .collect(),
        );
        one_hot.push(m);
    }
    Ok(OneHotReport {
        baseline,
        one_hot,
        reduction,
    })
}
