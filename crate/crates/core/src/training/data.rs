use std::fs;
use std::path::{Path, PathBuf};

use arst_tensor::{Scalar, Tensor};
use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image_io::{fit_square, load_rgb, to_tensor};

/// Content images of one directory, decoded and cropped to `size` once.
///
/// Files are taken in name order so sampling depends only on the seed.
#[derive(Debug, Clone)]
pub struct ContentSet {
    pub size: usize,
    pub paths: Vec<PathBuf>,
    images: Vec<RgbImage>,
}

impl ContentSet {
    pub fn load(dir: &Path, size: usize) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| {
            Error::Config(format!(
                "cannot read content directory {}: {e}",
                dir.display()
            ))
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut paths = Vec::new();
        let mut images = Vec::new();
        for path in files {
            match load_rgb(&path).and_then(|img| fit_square(&img, size as u32)) {
                Ok(img) => {
                    paths.push(path);
                    images.push(img);
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        if images.is_empty() {
            return Err(Error::Config(format!(
                "no decodable images in {}",
                dir.display()
            )));
        }
        Ok(Self {
            size,
            paths,
            images,
        })
    }

    pub fn from_images(images: Vec<RgbImage>, size: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("content set is empty".into()));
        }
        let images = images
            .iter()
            .map(|i| fit_square(i, size as u32))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            size,
            paths: Vec::new(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &RgbImage {
        &self.images[i]
    }

    /// Tensor of the images at `indices`.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<Tensor<S>> {
        let picked: Vec<&RgbImage> = indices.iter().map(|&i| &self.images[i]).collect();
        to_tensor(&picked)
    }

    /// `batch_size` images drawn uniformly with replacement.
    pub fn ingest_batch<S: Scalar>(
        &self,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Tensor<S>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..self.len()))
            .collect();
        self.batch(&indices)
    }
}

/// Load the style image as a `1×3×S×S` tensor.
pub fn load_style<S: Scalar>(path: &Path, size: usize) -> Result<Tensor<S>> {
    let img = load_rgb(path)
        .map_err(|e| Error::Config(format!("cannot load style image {}: {e}", path.display())))?;
    to_tensor(&[&fit_square(&img, size as u32)?])
}
