//! Random style weights and the multiplicative content noise mask.
//!
//! The mask starts as a white field with a few zero pixels and is blurred
//! with a normalized Gaussian truncated to a disc of radius 3σ, so pixels
//! farther than 3σ from every zero stay exactly 1.

use arst_tensor::{Scalar, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::AlphaVector;
use crate::model::Model;
use crate::rng::{stream_rng, Stream};
use crate::training::sample_alpha;

pub const MAX_ZEROS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMaskSpec {
    /// Number of zero pixels, 1 to 9.
    pub k: usize,
    /// Blur standard deviation in pixels.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseMaskSpec {
    pub fn new(k: usize, sigma: f64, seed: u64) -> Result<Self> {
        if !(1..=MAX_ZEROS).contains(&k) {
            return Err(Error::Validation(format!(
                "zero count {k} must be between 1 and {MAX_ZEROS}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "mask sigma {sigma} must be positive"
            )));
        }
        Ok(Self { k, sigma, seed })
    }

    /// σ = size/16 and k drawn from 3..=9.
    pub fn default_for(size: usize, seed: u64) -> Self {
        let k = stream_rng(seed, Stream::Noise, u64::MAX).random_range(3..=MAX_ZEROS);
        Self {
            k,
            sigma: size as f64 / 16.0,
            seed,
        }
    }
}

/// Normalized weights over integer offsets within distance 3σ.
fn kernel(sigma: f64) -> (isize, Vec<f64>) {
    let cutoff = 3.0 * sigma;
    let r = cutoff.floor() as isize;
    let side = (2 * r + 1) as usize;
    let mut w = vec![0.0; side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= cutoff * cutoff {
                w[(dy + r) as usize * side + (dx + r) as usize] =
                    (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (r, w)
}

/// Zero pixels chosen by `spec`, as `(row, col)`.
pub fn zero_points(h: usize, w: usize, spec: &NoiseMaskSpec) -> Result<Vec<(usize, usize)>> {
    if spec.k > h * w {
        return Err(Error::Validation(format!(
            "{} zeros do not fit in a {h}×{w} field",
            spec.k
        )));
    }
    let mut rng = stream_rng(spec.seed, Stream::Noise, 0);
    let mut picks = sample(&mut rng, h * w, spec.k).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| (i / w, i % w)).collect())
}

/// Mask for explicit zero positions.
pub fn noise_mask_at<S: Scalar>(
    h: usize,
    w: usize,
    zeros: &[(usize, usize)],
    sigma: f64,
) -> Result<Tensor<S>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!(
            "mask sigma {sigma} must be positive"
        )));
    }
    if let Some(z) = zeros.iter().find(|(y, x)| *y >= h || *x >= w) {
        return Err(Error::Validation(format!(
            "zero point {z:?} lies outside {h}×{w}"
        )));
    }
    let (r, kern) = kernel(sigma);
    let side = (2 * r + 1) as usize;
    let mut dip = vec![0.0f64; h * w];
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for &(zy, zx) in zeros {
        let (y0, y1) = (zy.saturating_sub(r as usize), (zy + r as usize).min(h - 1));
        let (x0, x1) = (zx.saturating_sub(r as usize), (zx + r as usize).min(w - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                // Edge replication: every tap whose clamped source is the zero point.
                let mut acc = 0.0;
                for dy in -r..=r {
                    if clamp(y as isize + dy, h) != zy {
                        continue;
                    }
                    for dx in -r..=r {
                        if clamp(x as isize + dx, w) == zx {
                            acc += kern[(dy + r) as usize * side + (dx + r) as usize];
                        }
                    }
                }
                dip[y * w + x] += acc;
            }
        }
    }
    Ok(Tensor::from_vec(
        &[h, w],
        dip.iter()
            .map(|d| S::from_f64_lossy((1.0 - d).clamp(0.0, 1.0)))
            .collect(),
    )?)
}

pub fn noise_mask<S: Scalar>(h: usize, w: usize, spec: &NoiseMaskSpec) -> Result<Tensor<S>> {
    NoiseMaskSpec::new(spec.k, spec.sigma, spec.seed)?;
    noise_mask_at(h, w, &zero_points(h, w, spec)?, spec.sigma)
}

/// Multiply every channel of `content: N×3×H×W` by `mask: H×W`.
pub fn apply_mask<S: Scalar>(content: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    let s = content.shape();
    if s.len() != 4 || mask.shape() != [s[2], s[3]] {
        return Err(Error::Tensor(arst_tensor::TensorError::Dimension(format!(
            "mask {:?} does not match content {s:?}",
            mask.shape()
        ))));
    }
    let plane = s[2] * s[3];
    let m = mask.data();
    Ok(Tensor::from_fn(s, |i| content.data()[i] * m[i % plane])?)
}

/// α_c = 1 and α_s uniform on [0, 1).
pub fn randomize_alpha(rng: &mut impl Rng) -> AlphaVector {
    sample_alpha(rng)
}

/// Outcome of one randomized stylization.
#[derive(Debug, Clone)]
pub struct Randomized<S> {
    pub alpha: AlphaVector,
    pub mask: NoiseMaskSpec,
    pub output: Tensor<S>,
}

/// Stylize with α and mask both derived from `seed`.
pub fn randomized_stylize<S: Scalar>(
    model: &Model<S>,
    content: &Tensor<S>,
    seed: u64,
) -> Result<Randomized<S>> {
    let alpha = randomize_alpha(&mut stream_rng(seed, Stream::Randomize, 0));
    let s = content.shape();
    if s.len() != 4 {
        return Err(Error::Validation(format!(
            "content must be N×3×H×W, got {s:?}"
        )));
    }
    let spec = NoiseMaskSpec::default_for(s[2].min(s[3]), seed);
    let masked = apply_mask(content, &noise_mask(s[2], s[3], &spec)?)?;
    let output = model.stylize(&masked, &alpha.style)?;
    Ok(Randomized {
        alpha,
        mask: spec,
        output,
    })
}
