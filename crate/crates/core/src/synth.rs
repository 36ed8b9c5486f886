//! Procedural images for demos and tests that must not depend on
//! downloaded datasets.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn to_pixel(c: [f64; 3]) -> Rgb<u8> {
    Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// A scene of a shaded background with a few discs and rectangles.
pub fn content_image(seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let s = size as f64;
    let shapes: Vec<(bool, f64, f64, f64, f64, [f64; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(0.1 * s..0.35 * s),
                rng.random_range(0.1 * s..0.35 * s),
                random_color(&mut rng),
            )
        })
        .collect();
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = ((fx - s / 2.0) * dx + (fy - s / 2.0) * dy) / s + 0.5;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = c0[k] * (1.0 - t) + c1[k] * t;
        }
        for &(disc, cx, cy, a, b, col) in &shapes {
            let inside = if disc {
                ((fx - cx) / a).powi(2) + ((fy - cy) / b).powi(2) <= 1.0
            } else {
                (fx - cx).abs() <= a / 2.0 && (fy - cy).abs() <= b / 2.0
            };
            if inside {
                c = col;
            }
        }
        to_pixel(c)
    })
}

/// A high-contrast texture of diagonal stripes modulated by dots.
pub fn style_image(seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<[f64; 3]> = (0..3).map(|_| random_color(&mut rng)).collect();
    let period: f64 = rng.random_range(5.0..9.0);
    let dot: f64 = rng.random_range(6.0..11.0);
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let stripe = (((fx + fy) / period).floor() as i64).rem_euclid(2) as usize;
        let (mx, my) = (
            fx.rem_euclid(dot) - dot / 2.0,
            fy.rem_euclid(dot) - dot / 2.0,
        );
        let on_dot = mx * mx + my * my < (dot / 4.0).powi(2);
        to_pixel(if on_dot { palette[2] } else { palette[stripe] })
    })
}
