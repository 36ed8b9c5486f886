#![allow(dead_code)]

use arst_core::image_io::to_tensor;
use arst_core::losses::StyleTargets;
use arst_core::model::{precompute_style_grams, Model};
use arst_core::networks::{
    ExtractorSpec, FeatureExtractor, Predictor, PredictorConfig, Stylizer, StylizerConfig,
};
use arst_core::synth;
use arst_core::training::{initial_checkpoint, ContentSet, TrainConfig, Trainer};
use arst_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub fn randn<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        S::from_f64_lossy(StandardNormal.sample(&mut rng))
    })
    .unwrap()
}

pub fn rand_unit<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).unwrap();
    Tensor::from_fn(shape, |_| S::from_f64_lossy(u.sample(&mut rng))).unwrap()
}

/// 2-channel stylizer, 6-unit predictor and a 2-channel extractor.
pub fn toy_model(seed: u64, size: usize) -> Model<f64> {
    toy_model_with(seed, size, 0.3)
}

pub fn toy_model_with(seed: u64, size: usize, stddev: f64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stylizer = Stylizer::init(StylizerConfig::toy(), stddev, &mut rng).unwrap();
    let predictor = Predictor::init(
        PredictorConfig::toy(),
        stylizer.norm_sites(),
        stddev,
        &mut rng,
    )
    .unwrap();
    let extractor = FeatureExtractor::from_spec(&ExtractorSpec::tiny()).unwrap();
    let style = rand_unit(&[1, 3, size, size], seed ^ 0xabc);
    let targets: StyleTargets<f64> = precompute_style_grams(&style, &extractor).unwrap();
    Model {
        stylizer,
        predictor,
        extractor,
        targets,
    }
}

/// Small but complete training setup held in memory.
pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        image_size: 16,
        batch_size: 2,
        iterations: 0,
        seed,
        stylizer: StylizerConfig {
            channels: [4, 4, 4],
            residual_blocks: 1,
            edge_kernel: 9,
        },
        predictor: PredictorConfig {
            width: 8,
            hidden_layers: 2,
            ..PredictorConfig::full()
        },
        extractor: ExtractorSpec::Toy {
            seed: 3,
            widths: [4, 4, 4],
        },
        ..TrainConfig::default()
    }
}

pub fn small_content(size: usize) -> ContentSet {
    ContentSet::from_images((0..12).map(|i| synth::content_image(i, 24)).collect(), size).unwrap()
}

pub fn small_style(size: usize) -> Tensor<f32> {
    let img = synth::style_image(5, size as u32);
    to_tensor(&[&img]).unwrap()
}

pub fn small_trainer(seed: u64) -> Trainer {
    let config = small_config(seed);
    let ck = initial_checkpoint(&config, &small_style(config.image_size)).unwrap();
    Trainer::from_parts(ck, small_content(config.image_size)).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}
