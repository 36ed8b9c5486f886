mod common;

use std::collections::HashSet;

use arst_core::networks::{
    cin, ExtractorSpec, FeatureExtractor, NormParams, Predictor, PredictorConfig, Stored, Stylizer,
    StylizerConfig, WeightFile, CIN_EPS,
};
use arst_core::Error;
use arst_tensor::{finite_diff_check, Graph, Tensor};
use common::{rand_unit, randn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cin_values(x: &Tensor<f64>, gamma: &[f64], beta: &[f64]) -> Tensor<f64> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let gv = g.input(Tensor::from_fn(&[n, c], |i| gamma[i % c]).unwrap());
    let bv = g.input(Tensor::from_fn(&[n, c], |i| beta[i % c]).unwrap());
    let out = cin(&mut g, xv, gv, bv, CIN_EPS).unwrap();
    g.value(out).clone()
}

#[test]
fn cin_pre_affine_is_standardized() {
    for seed in 0..5 {
        let x = randn::<f64>(&[2, 3, 6, 5], seed).map(|v| 3.0 * v + 1.5);
        let out = cin_values(&x, &[1.0; 3], &[0.0; 3]);
        for plane in out.data().chunks(30) {
            let mean = plane.iter().sum::<f64>() / 30.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }
}

#[test]
fn cin_in_f32_meets_same_bounds() {
    let x = randn::<f32>(&[1, 4, 8, 8], 9).map(|v| 10.0 * v - 4.0);
    let mut g = Graph::new();
    let xv = g.input(x);
    let gv = g.input(Tensor::ones(&[1, 4]).unwrap());
    let bv = g.input(Tensor::zeros(&[1, 4]).unwrap());
    let out = cin(&mut g, xv, gv, bv, CIN_EPS).unwrap();
    for plane in g.value(out).data().chunks(64) {
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let var = plane
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 64.0;
        assert!(
            mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3,
            "{mean} {var}"
        );
    }
}

#[test]
fn predictor_is_deterministic_and_sized() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sites = StylizerConfig::desk().norm_sites();
    let p = Predictor::<f32>::init(
        PredictorConfig {
            width: 32,
            ..PredictorConfig::full()
        },
        sites.clone(),
        0.01,
        &mut rng,
    )
    .unwrap();
    let a = p.predict(&[0.2, 0.4, 0.9]).unwrap();
    let b = p.predict(&[0.2, 0.4, 0.9]).unwrap();
    assert_eq!(a, b);
    let channels: usize = sites.iter().map(|s| s.channels).sum();
    assert_eq!(a.scalar_count(), 2 * channels);
    assert_eq!(p.output_len(), 2 * channels);
    a.check_sites(&sites).unwrap();
    assert!(matches!(p.predict(&[0.1, 0.2]), Err(Error::Validation(_))));
    assert!(matches!(
        p.predict(&[0.1, 0.2, 1.1]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn predictor_is_lipschitz_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sites = StylizerConfig::desk().norm_sites();
    let p = Predictor::<f64>::init(PredictorConfig::full(), sites, 0.01, &mut rng).unwrap();
    let base = [0.3, 0.5, 0.7];
    let out = p.predict(&base).unwrap();
    let mut worst = 0.0f64;
    for l in 0..3 {
        let mut a = base;
        a[l] += 1e-6;
        let diff = out.max_abs_diff(&p.predict(&a).unwrap());
        assert!(diff.is_finite());
        worst = worst.max(diff / 1e-6);
    }
    assert!(worst.is_finite() && worst < 1e3, "K = {worst}");
}

#[test]
fn stylizer_preserves_shape_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = StylizerConfig {
        channels: [4, 4, 8],
        residual_blocks: 2,
        edge_kernel: 9,
    };
    let s = Stylizer::<f32>::init(config, 0.01, &mut rng).unwrap();
    let params = NormParams::identity(&s.norm_sites());
    for size in [64, 128] {
        let x = rand_unit::<f32>(&[1, 3, size, size], size as u64);
        let out = s.stylize(&x, &params).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(out.bit_eq(&s.stylize(&x, &params).unwrap()));
    }
    let err = s
        .stylize(&rand_unit(&[1, 3, 30, 32], 0), &params)
        .unwrap_err();
    assert!(err.to_string().contains("crop by 2×0"), "{err}");
}

#[test]
fn stylizer_layers_follow_the_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = Stylizer::<f32>::init(StylizerConfig::full(), 0.01, &mut rng).unwrap();
    let shape = |n: &str| s.params.get(n).unwrap().shape().to_vec();
    assert_eq!(shape("conv1.weight"), [32, 3, 9, 9]);
    assert_eq!(shape("conv2.weight"), [64, 32, 3, 3]);
    assert_eq!(shape("conv3.weight"), [128, 64, 3, 3]);
    assert_eq!(shape("res6.b.weight"), [128, 128, 3, 3]);
    assert!(s.params.get("res7.a.weight").is_none());
    assert_eq!(shape("up1.weight"), [64, 128, 3, 3]);
    assert_eq!(shape("up2.weight"), [32, 64, 3, 3]);
    assert_eq!(shape("out.weight"), [3, 32, 9, 9]);
    // one site per convolution except the output head
    assert_eq!(s.norm_sites().len(), 3 + 14 + 2);
}

#[test]
fn residual_blocks_start_near_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = Stylizer::<f64>::init(StylizerConfig::full(), 0.01, &mut rng).unwrap();
    let x = randn::<f64>(&[1, 128, 16, 16], 6);
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    for block in 0..7 {
        let y = s.residual_block_bypassing_norm(block, &x).unwrap();
        let diff: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let ratio = norm(&diff) / norm(x.data());
        assert!(ratio < 0.1, "block {block}: {ratio}");
    }
}

#[test]
fn extractor_taps_shrink_and_are_pure() {
    let e = FeatureExtractor::<f32>::from_spec(&ExtractorSpec::toy()).unwrap();
    assert_eq!(e.tap_names(), ["conv2", "conv3", "conv4"]);
    let img = rand_unit::<f32>(&[1, 3, 48, 48], 1);
    let a = e.extract_values(&img).unwrap();
    let b = e.extract_values(&img).unwrap();
    let sizes: Vec<usize> = a.iter().map(|(_, t)| t.shape()[2]).collect();
    assert!(sizes.windows(2).all(|w| w[0] > w[1]), "{sizes:?}");
    let channels: Vec<usize> = a.iter().map(|(_, t)| t.shape()[1]).collect();
    assert_eq!(channels, [16, 32, 64]);
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        assert!(x.bit_eq(y));
    }
}

#[test]
fn extractor_gradient_reaches_image_only() {
    let e = FeatureExtractor::<f64>::from_spec(&ExtractorSpec::Toy {
        seed: 11,
        widths: [3, 4, 5],
    })
    .unwrap();
    let report = finite_diff_check(
        "sum(conv3)",
        |g, x| {
            let f = e
                .extract(g, x)
                .map_err(|e| arst_tensor::TensorError::Contract(e.to_string()))?;
            g.sum_all(f.get("conv3").unwrap())
        },
        &rand_unit(&[1, 3, 8, 8], 2),
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report}");
}

#[test]
fn unloaded_extractor_is_a_state_error() {
    let e = FeatureExtractor::<f32>::default();
    let mut g = Graph::new();
    let x = g.input(rand_unit(&[1, 3, 8, 8], 0));
    assert!(matches!(e.extract(&mut g, x), Err(Error::State(_))));
}

#[test]
fn vgg_extractor_loads_from_weight_file() {
    let mut w = WeightFile::new();
    let mut inc = 3;
    for (b, count) in [2, 2, 4, 4].into_iter().enumerate() {
        for i in 0..count {
            let o = 4;
            w.insert(
                format!("conv{}_{}.weight", b + 1, i + 1),
                &randn::<f32>(&[o, inc, 3, 3], (b * 10 + i) as u64),
            )
            .unwrap();
            w.insert(
                format!("conv{}_{}.bias", b + 1, i + 1),
                &Tensor::<f32>::zeros(&[o]).unwrap(),
            )
            .unwrap();
            inc = o;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vgg.arst");
    w.save(&path).unwrap();
    let e = FeatureExtractor::<f32>::from_spec(&ExtractorSpec::Vgg19 { path }).unwrap();
    let feats = e.extract_values(&rand_unit(&[1, 3, 32, 32], 3)).unwrap();
    let sizes: Vec<usize> = feats.iter().map(|(_, t)| t.shape()[2]).collect();
    assert_eq!(sizes, [16, 8, 4]);
}

fn random_file(seed: u64) -> WeightFile {
    let mut w = WeightFile::new();
    w.insert("stylizer.conv1.weight", &randn::<f32>(&[4, 3, 9, 9], seed))
        .unwrap();
    w.insert("stylizer.conv1.bias", &randn::<f32>(&[4], seed + 1))
        .unwrap();
    w.insert("ema", &randn::<f64>(&[2, 2], seed + 2)).unwrap();
    w
}

#[test]
fn weight_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.arst");
    let w = random_file(1);
    w.save(&path).unwrap();
    let back = WeightFile::load(&path).unwrap();
    assert!(w.bit_eq(&back));
    assert_eq!(std::fs::read(&path).unwrap(), back.encode());
    assert!(!dir.path().join("w.partial").exists());
}

#[test]
fn corrupted_byte_fails_checksum() {
    let bytes = random_file(2).encode();
    for pos in [20, bytes.len() / 2, bytes.len() - 5] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x40;
        match WeightFile::decode(&bad) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("byte {pos}: {other:?}"),
        }
    }
}

#[test]
fn duplicate_names_are_rejected_on_decode() {
    // Hand-assemble a file holding the same name twice.
    let mut body = b"ARST".to_vec();
    body.extend_from_slice(&1u16.to_le_bytes());
    body.extend_from_slice(&2u32.to_le_bytes());
    for _ in 0..2 {
        body.extend_from_slice(&1u16.to_le_bytes());
        body.push(b'x');
        body.extend_from_slice(&[0, 0]);
        body.extend_from_slice(&1.5f32.to_le_bytes());
    }
    let crc = crc32fast::hash(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(WeightFile::decode(&body), Err(Error::Format(m)) if m.contains("duplicate")));
}

#[test]
fn unknown_tensors_are_reported() {
    let mut w = random_file(3);
    w.insert("future.thing", &Tensor::<f32>::scalar(1.0))
        .unwrap();
    let back = WeightFile::decode(&w.encode()).unwrap();
    let known: HashSet<&str> = ["stylizer.conv1.weight", "stylizer.conv1.bias", "ema"].into();
    assert_eq!(back.extras(&known), ["future.thing"]);
    assert!(matches!(back.get("future.thing"), Some(Stored::F32(_))));
}
