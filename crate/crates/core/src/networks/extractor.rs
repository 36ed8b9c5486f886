//! Frozen convolutional feature extractor with named taps.

use std::path::PathBuf;

use arst_tensor::{Graph, Padding, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::gaussian;
use super::weights::WeightFile;
use crate::error::{Error, Result};

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Which extractor to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// Six seeded random 3×3 convolutions in three blocks; each block starts
    /// with a stride-2 convolution and ends in a tap.
    Toy { seed: u64, widths: [usize; 3] },
    /// VGG-19 convolutions through `conv4_4`, read from a weight file with
    /// tensors named `conv{b}_{i}.weight` / `conv{b}_{i}.bias`.
    Vgg19 { path: PathBuf },
}

impl ExtractorSpec {
    pub fn toy() -> Self {
        ExtractorSpec::Toy {
            seed: 0x5eed_0ff1,
            widths: [16, 32, 64],
        }
    }

    pub fn tiny() -> Self {
        ExtractorSpec::Toy {
            seed: 0x5eed_0ff1,
            widths: [2, 2, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv {
        weight: Tensor<S>,
        bias: Tensor<S>,
        stride: usize,
    },
    Relu,
    AvgPool,
    Tap(String),
}

/// Feature maps produced by one extraction, in tap order.
#[derive(Debug, Clone)]
pub struct Features {
    pub taps: Vec<(String, Var)>,
}

impl Features {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Validation(format!("extractor has no tap named {name}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<S> {
    pub id: String,
    layers: Vec<Layer<S>>,
    mean: [f64; 3],
    std: [f64; 3],
}

impl<S: Scalar> Default for FeatureExtractor<S> {
    /// An extractor with no layers; extraction fails until one is loaded.
    fn default() -> Self {
        Self {
            id: "unloaded".into(),
            layers: Vec::new(),
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl<S: Scalar> FeatureExtractor<S> {
    pub fn from_spec(spec: &ExtractorSpec) -> Result<Self> {
        match spec {
            ExtractorSpec::Toy { seed, widths } => Self::toy(*seed, *widths),
            ExtractorSpec::Vgg19 { path } => {
                Self::vgg19(&WeightFile::load(path)?, path.display().to_string())
            }
        }
    }

    pub fn toy(seed: u64, widths: [usize; 3]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_c = 3;
        for (block, &c) in widths.iter().enumerate() {
            for (i, stride) in [(0, 2), (1, 1)] {
                let fan_in = in_c * 9;
                let weight = gaussian(&[c, in_c, 3, 3], (2.0 / fan_in as f64).sqrt(), &mut rng)?;
                layers.push(Layer::Conv {
                    weight,
                    bias: Tensor::zeros(&[c])?,
                    stride,
                });
                layers.push(Layer::Relu);
                in_c = c;
                if i == 1 {
                    layers.push(Layer::Tap(format!("conv{}", block + 2)));
                }
            }
        }
        Ok(Self {
            id: format!("toy:{seed:x}:{}-{}-{}", widths[0], widths[1], widths[2]),
            layers,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        })
    }

    /// VGG-19 through `conv4_4` with 2×2 average pooling between blocks.
    pub fn vgg19(weights: &WeightFile, id: String) -> Result<Self> {
        let blocks = [2usize, 2, 4, 4];
        let mut layers = Vec::new();
        for (b, &count) in blocks.iter().enumerate() {
            if b > 0 {
                layers.push(Layer::AvgPool);
            }
            for i in 1..=count {
                let name = format!("conv{}_{}", b + 1, i);
                let weight = weights.tensor::<S>(&format!("{name}.weight"))?;
                let bias = weights.tensor::<S>(&format!("{name}.bias"))?;
                if weight.rank() != 4 || bias.shape() != [weight.shape()[0]] {
                    return Err(Error::Format(format!(
                        "{name} has shape {:?}",
                        weight.shape()
                    )));
                }
                layers.push(Layer::Conv {
                    weight,
                    bias,
                    stride: 1,
                });
                layers.push(Layer::Relu);
            }
            if b > 0 {
                layers.push(Layer::Tap(format!("conv{}", b + 1)));
            }
        }
        Ok(Self {
            id: format!("vgg19:{id}"),
            layers,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        })
    }

    pub fn cast<T: Scalar>(&self) -> FeatureExtractor<T> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                } => Layer::Conv {
                    weight: weight.cast(),
                    bias: bias.cast(),
                    stride: *stride,
                },
                Layer::Relu => Layer::Relu,
                Layer::AvgPool => Layer::AvgPool,
                Layer::Tap(n) => Layer::Tap(n.clone()),
            })
            .collect();
        FeatureExtractor {
            id: self.id.clone(),
            layers,
            mean: self.mean,
            std: self.std,
        }
    }

    /// Every weight and bias, for immutability checks.
    pub fn weights(&self) -> Vec<&Tensor<S>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv { weight, bias, .. } => vec![weight, bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn is_loaded(&self) -> bool {
        !self.layers.is_empty()
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Tap(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    /// Run the extractor on `image: N×3×H×W` in [0, 1].
    ///
    /// Weights enter `g` as constants, so gradients reach the image but
    /// never the extractor.
    pub fn extract(&self, g: &mut Graph<S>, image: Var) -> Result<Features> {
        if !self.is_loaded() {
            return Err(Error::State("feature extractor is not loaded".into()));
        }
        let shape = g.shape(image).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Validation(format!(
                "extractor expects N×3×H×W, got {shape:?}"
            )));
        }
        let plane = shape[2] * shape[3];
        let per_channel = |v: [f64; 3], f: fn(f64) -> f64| {
            Tensor::from_fn(&shape, |i| S::from_f64_lossy(f(v[(i / plane) % 3])))
        };
        let shift = g.input(per_channel(self.mean, |m| m)?);
        let scale = g.input(per_channel(self.std, |s| 1.0 / s)?);
        let centered = g.sub(image, shift)?;
        let mut x = g.mul(centered, scale)?;
        let mut taps = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                } => {
                    let w = g.input(weight.clone());
                    let b = g.input(bias.clone());
                    x = g.conv2d(x, w, Some(b), *stride, Padding::Same)?;
                }
                Layer::Relu => x = g.relu(x)?,
                Layer::AvgPool => x = g.avg_pool2(x)?,
                Layer::Tap(name) => taps.push((name.clone(), x)),
            }
        }
        Ok(Features { taps })
    }

    /// Feature values of a batch outside of any training graph.
    pub fn extract_values(&self, image: &Tensor<S>) -> Result<Vec<(String, Tensor<S>)>> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let f = self.extract(&mut g, x)?;
        Ok(f.taps
            .iter()
            .map(|(n, v)| (n.clone(), g.value(*v).clone()))
            .collect())
    }
}
