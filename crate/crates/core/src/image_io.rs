//! Image decoding, square cropping and conversion to and from tensors.

use std::io::Cursor;
use std::path::Path;

use arst_tensor::{Scalar, Tensor};
use image::imageops::{self, FilterType};
pub use image::RgbImage;
use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Region kept by a crop, in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?
        .to_rgb8())
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    Ok(ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()?
        .decode()?
        .to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Resize so the shorter side equals `size`, then center-crop to a square.
pub fn fit_square(img: &RgbImage, size: u32) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if size == 0 || w == 0 || h == 0 {
        return Err(Error::Validation(format!(
            "cannot fit a {w}×{h} image to {size}"
        )));
    }
    let scale = size as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(size);
    let nh = ((h as f64 * scale).round() as u32).max(size);
    let resized = if (nw, nh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, FilterType::Triangle)
    };
    Ok(imageops::crop_imm(&resized, (nw - size) / 2, (nh - size) / 2, size, size).to_image())
}

/// Center-crop both sides down to a multiple of `m`.
pub fn crop_to_multiple(img: &RgbImage, m: u32) -> Result<(RgbImage, Crop)> {
    let (w, h) = img.dimensions();
    let (cw, ch) = (w - w % m, h - h % m);
    if cw == 0 || ch == 0 {
        return Err(Error::Validation(format!(
            "image {w}×{h} is smaller than {m} pixels"
        )));
    }
    let crop = Crop {
        x: (w - cw) / 2,
        y: (h - ch) / 2,
        width: cw,
        height: ch,
    };
    Ok((
        imageops::crop_imm(img, crop.x, crop.y, cw, ch).to_image(),
        crop,
    ))
}

/// Stack same-sized images into `N×3×H×W` with values in [0, 1].
pub fn to_tensor<S: Scalar>(images: &[&RgbImage]) -> Result<Tensor<S>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Validation("no images to stack".into()))?;
    let (w, h) = first.dimensions();
    if images.iter().any(|i| i.dimensions() != (w, h)) {
        return Err(Error::Validation(
            "images in a batch must share one size".into(),
        ));
    }
    let (w, h) = (w as usize, h as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        let raw = img.as_raw();
        for c in 0..3 {
            data.extend((0..h * w).map(|p| S::from_f64_lossy(raw[3 * p + c] as f64 / 255.0)));
        }
    }
    Ok(Tensor::from_vec(&[images.len(), 3, h, w], data)?)
}

/// Image `index` of an `N×3×H×W` tensor, rounded to 8 bits.
pub fn from_tensor<S: Scalar>(t: &Tensor<S>, index: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 || index >= s[0] {
        return Err(Error::Validation(format!(
            "cannot take image {index} of tensor {s:?}"
        )));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let base = index * 3 * plane;
    let d = t.data();
    let mut raw = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            let v = d[base + c * plane + p].to_f64_lossy();
            raw.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn fit_square_crops_center() {
        let mut img = RgbImage::new(8, 4);
        img.put_pixel(4, 2, Rgb([200, 0, 0]));
        let out = fit_square(&img, 4).unwrap();
        assert_eq!(out.dimensions(), (4, 4));
        assert_eq!(out.get_pixel(2, 2), &Rgb([200, 0, 0]));
    }

    #[test]
    fn tensor_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 70, 9]));
        let t = to_tensor::<f32>(&[&img]).unwrap();
        assert_eq!(t.shape(), [1, 3, 3, 5]);
        assert_eq!(from_tensor(&t, 0).unwrap(), img);
        let png = encode_png(&img).unwrap();
        assert_eq!(decode_rgb(&png).unwrap(), img);
    }

    #[test]
    fn crop_to_multiple_reports_region() {
        let img = RgbImage::new(10, 7);
        let (out, crop) = crop_to_multiple(&img, 4).unwrap();
        assert_eq!(out.dimensions(), (8, 4));
        assert_eq!(
            crop,
            Crop {
                x: 1,
                y: 1,
                width: 8,
                height: 4
            }
        );
    }
}
