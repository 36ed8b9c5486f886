//! Single-image stylization shared by the `stylize` command and the service.

use arst_core::image_io::{crop_to_multiple, from_tensor, to_tensor, Crop, RgbImage};
use arst_core::losses::AlphaVector;
use arst_core::randomizer::{apply_mask, noise_mask, randomize_alpha, NoiseMaskSpec};
use arst_core::rng::{stream_rng, Stream};
use arst_core::{Model, Result};
use serde::{Deserialize, Serialize};

/// Both stride-2 stages must divide the input exactly.
pub const SIZE_MULTIPLE: u32 = 4;

/// Noise mask request. Missing `k` or `sigma` take the defaults for the
/// cropped image size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRequest {
    pub seed: u64,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl NoiseRequest {
    pub fn resolve(&self, h: u32, w: u32) -> Result<NoiseMaskSpec> {
        let d = NoiseMaskSpec::default_for(h.min(w) as usize, self.seed);
        NoiseMaskSpec::new(
            self.k.unwrap_or(d.k),
            self.sigma.unwrap_or(d.sigma),
            self.seed,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Stylized {
    pub image: RgbImage,
    pub crop: Crop,
    pub alpha_s: Vec<f64>,
    pub noise: Option<NoiseMaskSpec>,
}

/// Style weights for a randomized request: same draw as
/// [`arst_core::randomizer::randomized_stylize`].
pub fn random_alpha(seed: u64) -> AlphaVector {
    randomize_alpha(&mut stream_rng(seed, Stream::Randomize, 0))
}

/// Center-crop to the size multiple, optionally mask, and stylize.
pub fn stylize_image(
    model: &Model<f32>,
    img: &RgbImage,
    alpha_s: &[f64],
    noise: Option<NoiseRequest>,
) -> Result<Stylized> {
    let (cropped, crop) = crop_to_multiple(img, SIZE_MULTIPLE)?;
    let mut content = to_tensor::<f32>(&[&cropped])?;
    let noise = match noise {
        Some(n) => {
            let spec = n.resolve(crop.height, crop.width)?;
            let mask = noise_mask(crop.height as usize, crop.width as usize, &spec)?;
            content = apply_mask(&content, &mask)?;
            Some(spec)
        }
        None => None,
    };
    let out = model.stylize(&content, alpha_s)?;
    Ok(Stylized {
        image: from_tensor(&out, 0)?,
        crop,
        alpha_s: alpha_s.to_vec(),
        noise,
    })
}

/// `x,y,width,height` as sent in the crop response header.
pub fn crop_header(c: &Crop) -> String {
    format!("{},{},{},{}", c.x, c.y, c.width, c.height)
}
