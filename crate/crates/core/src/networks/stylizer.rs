//! The feed-forward stylizer: 9×9 stem, two stride-2 stages, residual
//! blocks, two nearest-neighbour upsampling stages and a 9×9 sigmoid head.
//! Every convolution except the head is followed by conditional instance
//! normalization.

use arst_tensor::{Graph, Padding, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cin::{cin, CIN_EPS};
use super::norm_params::{NormParams, NormSite, NormVars};
use super::params::{gaussian, ParamStore};
use crate::error::{Error, Result};

/// Widths and depth of the stylizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylizerConfig {
    /// Feature maps of the stem and the two downsampling stages.
    pub channels: [usize; 3],
    pub residual_blocks: usize,
    /// Kernel size of the stem and the output convolution.
    pub edge_kernel: usize,
}

impl StylizerConfig {
    /// 32/64/128 feature maps with 7 residual blocks.
    pub fn full() -> Self {
        Self {
            channels: [32, 64, 128],
            residual_blocks: 7,
            edge_kernel: 9,
        }
    }

    /// Quarter-width variant for single-core CPU training.
    pub fn desk() -> Self {
        Self {
            channels: [16, 32, 64],
            residual_blocks: 7,
            edge_kernel: 9,
        }
    }

    /// Two channels throughout; used for finite-difference checks.
    pub fn toy() -> Self {
        Self {
            channels: [2, 2, 2],
            residual_blocks: 1,
            edge_kernel: 9,
        }
    }

    /// Normalization sites in forward order.
    pub fn norm_sites(&self) -> Vec<NormSite> {
        let [c1, c2, c3] = self.channels;
        let mut sites = vec![site("conv1", c1), site("conv2", c2), site("conv3", c3)];
        for i in 0..self.residual_blocks {
            sites.push(site(&format!("res{i}.a"), c3));
            sites.push(site(&format!("res{i}.b"), c3));
        }
        sites.push(site("up1", c2));
        sites.push(site("up2", c1));
        sites
    }

    /// `(name, out, in, kernel)` of every convolution in forward order.
    fn convs(&self) -> Vec<(String, usize, usize, usize)> {
        let [c1, c2, c3] = self.channels;
        let k = self.edge_kernel;
        let mut convs = vec![
            ("conv1".to_string(), c1, 3, k),
            ("conv2".to_string(), c2, c1, 3),
            ("conv3".to_string(), c3, c2, 3),
        ];
        for i in 0..self.residual_blocks {
            convs.push((format!("res{i}.a"), c3, c3, 3));
            convs.push((format!("res{i}.b"), c3, c3, 3));
        }
        convs.push(("up1".to_string(), c2, c3, 3));
        convs.push(("up2".to_string(), c1, c2, 3));
        convs.push(("out".to_string(), 3, c1, k));
        convs
    }
}

fn site(name: &str, channels: usize) -> NormSite {
    NormSite {
        name: name.to_string(),
        channels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stylizer<S> {
    pub config: StylizerConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Stylizer<S> {
    /// Gaussian weights with the given deviation and zero biases.
    pub fn init(config: StylizerConfig, stddev: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::default();
        for (name, o, i, k) in config.convs() {
            params.push(
                format!("{name}.weight"),
                gaussian(&[o, i, k, k], stddev, rng)?,
            );
            params.push(format!("{name}.bias"), Tensor::zeros(&[o])?);
        }
        Ok(Self { config, params })
    }

    /// Rebuild from stored parameters, checking names and shapes.
    pub fn from_params(config: StylizerConfig, params: ParamStore<S>) -> Result<Self> {
        let expected = config.convs();
        if params.len() != 2 * expected.len() {
            return Err(Error::Format(format!(
                "stylizer expects {} tensors, found {}",
                2 * expected.len(),
                params.len()
            )));
        }
        for (j, (name, o, i, k)) in expected.iter().enumerate() {
            let w = params.tensor(2 * j);
            let b = params.tensor(2 * j + 1);
            if w.shape() != [*o, *i, *k, *k] || b.shape() != [*o] {
                return Err(Error::Format(format!(
                    "stylizer layer {name} has unexpected shape {:?}",
                    w.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn norm_sites(&self) -> Vec<NormSite> {
        self.config.norm_sites()
    }

    /// Build the forward pass on `g`.
    ///
    /// `vars` are this stylizer's parameters bound on `g` (see
    /// [`ParamStore::bind`]); `norm` holds `(γ, β)` for every site.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        vars: &[Var],
        content: Var,
        norm: &NormVars,
    ) -> Result<Var> {
        let shape = g.shape(content).to_vec();
        check_input_shape(&shape)?;
        if norm.len() != self.config.norm_sites().len() {
            return Err(Error::Validation(format!(
                "{} normalization sites supplied, stylizer has {}",
                norm.len(),
                self.config.norm_sites().len()
            )));
        }
        let mut layers = Layers {
            g,
            vars,
            norm,
            conv: 0,
        };
        let mut x = layers.conv_norm_relu(content, 1)?;
        x = layers.conv_norm_relu(x, 2)?;
        x = layers.conv_norm_relu(x, 2)?;
        for _ in 0..self.config.residual_blocks {
            x = layers.residual(x, true)?;
        }
        for _ in 0..2 {
            let up = layers.g.upsample_nearest(x, 2)?;
            x = layers.conv_norm_relu(up, 1)?;
        }
        let out = layers.conv(x, 1)?;
        Ok(layers.g.sigmoid(out)?)
    }

    /// Stylize a batch outside of training.
    pub fn stylize(&self, content: &Tensor<S>, params: &NormParams<S>) -> Result<Tensor<S>> {
        check_input_shape(content.shape())?;
        params.check_sites(&self.norm_sites())?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let c = g.input(content.clone());
        let norm = params.bind(&mut g, content.shape()[0])?;
        let out = self.forward(&mut g, &vars, c, &norm)?;
        Ok(g.value(out).clone())
    }

    /// Apply residual block `block` to `x` with instance normalization
    /// bypassed, exposing the bare convolution path plus skip connection.
    pub fn residual_block_bypassing_norm(&self, block: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
        if block >= self.config.residual_blocks {
            return Err(Error::Validation(format!("no residual block {block}")));
        }
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let xv = g.input(x.clone());
        let mut layers = Layers {
            g: &mut g,
            vars: &vars,
            norm: &Vec::new(),
            conv: 3 + 2 * block,
        };
        let out = layers.residual(xv, false)?;
        Ok(g.value(out).clone())
    }
}

/// Spatial extents must survive two stride-2 stages exactly.
pub fn check_input_shape(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Validation(format!(
            "stylizer expects N×3×H×W input, got {shape:?}"
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Validation(format!(
            "image {h}×{w} is not divisible by 4; pad or crop by {}×{} pixels",
            (4 - h % 4) % 4,
            (4 - w % 4) % 4
        )));
    }
    Ok(())
}

/// Walks the parameter list in forward order.
struct Layers<'a, S: Scalar> {
    g: &'a mut Graph<S>,
    vars: &'a [Var],
    norm: &'a NormVars,
    conv: usize,
}

impl<S: Scalar> Layers<'_, S> {
    fn conv(&mut self, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = (self.vars[2 * self.conv], self.vars[2 * self.conv + 1]);
        self.conv += 1;
        Ok(self.g.conv2d(x, w, Some(b), stride, Padding::Same)?)
    }

    fn norm(&mut self, x: Var) -> Result<Var> {
        let (gamma, beta) = self.norm[self.conv - 1];
        cin(self.g, x, gamma, beta, CIN_EPS)
    }

    fn conv_norm_relu(&mut self, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(x, stride)?;
        let y = self.norm(y)?;
        Ok(self.g.relu(y)?)
    }

    fn residual(&mut self, x: Var, normalize: bool) -> Result<Var> {
        let mut y = self.conv(x, 1)?;
        if normalize {
            y = self.norm(y)?;
        }
        y = self.g.relu(y)?;
        y = self.conv(y, 1)?;
        if normalize {
            y = self.norm(y)?;
        }
        Ok(self.g.add(x, y)?)
    }
}
