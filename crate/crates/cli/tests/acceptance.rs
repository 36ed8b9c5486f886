//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::sync::Arc;
use std::time::Instant;

use arst_cli::service::{router, AppState, ServeOptions};
use arst_core::eval::{one_hot_eval, sweep_eval, OneHotReport, OthersMode, SweepReport};
use arst_core::image_io::{encode_png, from_tensor, to_tensor};
use arst_core::losses::{
    ema_normalize, gram, gram_value, style_layer_loss, AlphaVector, EmaState, STYLE_LAYERS,
};
use arst_core::model::{precompute_style_grams, Model};
use arst_core::networks::{
    cin, ExtractorSpec, FeatureExtractor, Predictor, PredictorConfig, Stylizer, StylizerConfig,
    CIN_EPS,
};
use arst_core::randomizer::randomized_stylize;
use arst_core::synth;
use arst_core::training::{
    initial_checkpoint, AdamConfig, Checkpoint, ContentSet, RunSinks, TrainConfig, Trainer,
};
use arst_tensor::{finite_diff_check_many, GradReport, Graph, Padding, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-3;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

const SIZE: usize = 48;
const TRAIN_IMAGES: u64 = 200;
const HELD_OUT: u64 = 50;
const ITERATIONS: u64 = 2000;
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];
const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal)).unwrap()
}

fn rand_unit(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>()).unwrap()
}

// ---------------------------------------------------------------- gradients

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> arst_tensor::Result<Var> {
    let w = g.input(randn(g.shape(y), seed ^ 0xabcd));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> arst_tensor::Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        (
            "conv2d",
            vec![vec![2, 3, 6, 6], vec![4, 3, 3, 3], vec![4]],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Same)),
        ),
        (
            "conv2d_9x9",
            vec![vec![1, 2, 10, 10], vec![2, 2, 9, 9]],
            Box::new(|g, v| g.conv2d(v[0], v[1], None, 1, Padding::Valid)),
        ),
        (
            "dense",
            vec![vec![3, 5], vec![5, 4], vec![4]],
            Box::new(|g, v| g.dense(v[0], v[1], v[2])),
        ),
        (
            "upsample_nearest",
            vec![vec![1, 2, 3, 3]],
            Box::new(|g, v| g.upsample_nearest(v[0], 2)),
        ),
        (
            "avg_pool2",
            vec![vec![1, 2, 4, 6]],
            Box::new(|g, v| g.avg_pool2(v[0])),
        ),
        ("relu", vec![vec![3, 4]], Box::new(|g, v| g.relu(v[0]))),
        (
            "sigmoid",
            vec![vec![3, 4]],
            Box::new(|g, v| g.sigmoid(v[0])),
        ),
        ("square", vec![vec![3, 4]], Box::new(|g, v| g.square(v[0]))),
        (
            "add",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "scalar_mul",
            vec![vec![3, 4], vec![]],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![vec![5]],
            Box::new(|g, v| g.scale(v[0], -0.75)),
        ),
        (
            "sum",
            vec![vec![2, 3, 4]],
            Box::new(|g, v| g.sum(v[0], &[1])),
        ),
        (
            "mean",
            vec![vec![2, 3, 4]],
            Box::new(|g, v| g.mean(v[0], &[0, 2])),
        ),
        (
            "broadcast",
            vec![vec![2, 3]],
            Box::new(|g, v| g.broadcast(v[0], &[1, 3], &[2, 4, 3, 2])),
        ),
        (
            "narrow",
            vec![vec![2, 6]],
            Box::new(|g, v| g.narrow(v[0], 1, 2, 3)),
        ),
        (
            "reshape",
            vec![vec![2, 6]],
            Box::new(|g, v| g.reshape(v[0], &[3, 4])),
        ),
        (
            "matmul_nt",
            vec![vec![2, 3, 4], vec![2, 5, 4]],
            Box::new(|g, v| g.matmul_nt(v[0], v[1])),
        ),
        (
            "instance_norm",
            vec![vec![2, 3, 3, 4], vec![2, 3], vec![2, 3]],
            Box::new(|g, v| g.instance_norm(v[0], v[1], v[2], 1e-5)),
        ),
        (
            "gram",
            vec![vec![2, 3, 4, 4]],
            Box::new(|g, v| gram(g, v[0]).map_err(|e| TensorError::Contract(e.to_string()))),
        ),
    ]
}

fn toy_model(seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stylizer = Stylizer::init(StylizerConfig::toy(), 0.1, &mut rng).unwrap();
    let predictor =
        Predictor::init(PredictorConfig::toy(), stylizer.norm_sites(), 0.1, &mut rng).unwrap();
    let extractor = FeatureExtractor::from_spec(&ExtractorSpec::tiny()).unwrap();
    let targets =
        precompute_style_grams(&rand_unit(&[1, 3, 8, 8], seed ^ 0xabc), &extractor).unwrap();
    Model {
        stylizer,
        predictor,
        extractor,
        targets,
    }
}

/// Composed objective on the 8×8, 2-channel toy network, probed at random
/// stylizer and predictor parameters.
///
/// Biases of convolutions that feed an instance normalization have an exact
/// zero gradient, so central differences there only see rounding noise of
/// order ε·|f|/h and a relative error is undefined. They are excluded from the
/// relative check; the second value is their largest analytic |gradient|,
/// which must be zero to rounding.
fn toy_objective(seed: u64) -> (GradReport, f64) {
    let model = toy_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content = rand_unit(&[2, 3, 8, 8], seed + 50);
    let alpha = AlphaVector::with_style(&[rng.random(), rng.random(), rng.random()]).unwrap();
    let factors: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..4.0)).collect();
    let params: Vec<Tensor<f64>> = model.trainable().cloned().collect();
    let ns = model.stylizer.params.len();
    let normalized_bias: Vec<bool> = model
        .stylizer
        .params
        .names()
        .map(|n| n.ends_with(".bias") && !n.starts_with("out."))
        .collect();
    let stylizer_probe: Vec<usize> = (0..ns).filter(|&t| !normalized_bias[t]).collect();
    let probes: Vec<(usize, usize)> = (0..60)
        .map(|i| {
            let t = if i % 2 == 0 {
                stylizer_probe[rng.random_range(0..stylizer_probe.len())]
            } else {
                rng.random_range(ns..params.len())
            };
            (t, rng.random_range(0..params[t].numel()))
        })
        .collect();
    let objective = |g: &mut Graph<f64>, vars: &[Var]| -> arst_tensor::Result<Var> {
        let split = (vars[..ns].to_vec(), vars[ns..].to_vec());
        let c = g.input(content.clone());
        let wrap = |e: arst_core::Error| TensorError::Contract(e.to_string());
        let losses = model
            .layer_losses(g, &split, c, &alpha.style)
            .map_err(wrap)?;
        model
            .weighted_total(g, &losses, &factors, &alpha)
            .map_err(wrap)
    };
    let report = finite_diff_check_many(
        "toy objective",
        objective,
        &params,
        Some(&probes),
        FD_STEP,
        FD_TOL,
    )
    .unwrap();

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let root = objective(&mut g, &vars).unwrap();
    g.backward(root).unwrap();
    let bias_grad = (0..ns)
        .filter(|&t| normalized_bias[t])
        .flat_map(|t| g.grad(vars[t]).unwrap().data().to_vec())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    (report, bias_grad)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut checks = 0;
    for (name, shapes, f) in op_cases() {
        for seed in SEEDS {
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| randn(s, seed * 31 + i as u64))
                .collect();
            let r = finite_diff_check_many(
                name,
                |g, v| {
                    let y = f(g, v)?;
                    weighted_sum(g, y, seed)
                },
                &inputs,
                None,
                FD_STEP,
                FD_TOL,
            )
            .unwrap();
            checks += 1;
            worst = worst.max(r.max_rel_error);
            if !r.passed {
                failures.push(format!("{name}/{seed}"));
            }
        }
    }
    let mut toy_checked = usize::MAX;
    let mut bias_worst: f64 = 0.0;
    for seed in SEEDS {
        let (r, bias_grad) = toy_objective(seed);
        checks += 1;
        toy_checked = toy_checked.min(r.checked);
        worst = worst.max(r.max_rel_error);
        bias_worst = bias_worst.max(bias_grad);
        if !r.passed || bias_grad > 1e-10 {
            failures.push(format!("toy/{seed}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && toy_checked >= 50 && secs < 300.0,
        format!(
            "{checks} checks over {} seeds, max rel err {worst:.2e} (tol {FD_TOL:.0e}), {toy_checked} toy params/seed, pre-normalization bias |grad| max {bias_worst:.1e} (<=1e-10), {secs:.1}s; failures {failures:?}",
            SEEDS.len()
        ),
    )
}

// ------------------------------------------------------------ normalization

fn normalization_invariants() -> Outcome {
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    for seed in SEEDS {
        let (n, c, h, w) = (2, 3, 6, 5);
        let x = randn(&[n, c, h, w], seed).map(|v| 3.0 * v + 1.5);
        let mut g = Graph::new();
        let xv = g.input(x);
        let gv = g.input(Tensor::ones(&[n, c]).unwrap());
        let bv = g.input(Tensor::zeros(&[n, c]).unwrap());
        let out = cin(&mut g, xv, gv, bv, CIN_EPS).unwrap();
        for plane in g.value(out).data().chunks(h * w) {
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane.len() as f64;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }

        let level = randn(&[c], seed + 9);
        let x = Tensor::from_fn(&[1, c, h, w], |i| level.data()[i / (h * w)]).unwrap();
        let gamma = randn(&[1, c], seed + 10);
        let beta = randn(&[1, c], seed + 11);
        let mut g = Graph::new();
        let (xv, gv, bv) = (g.input(x), g.input(gamma), g.input(beta.clone()));
        let out = cin(&mut g, xv, gv, bv, CIN_EPS).unwrap();
        for (ch, plane) in g.value(out).data().chunks(h * w).enumerate() {
            for v in plane {
                worst_const = worst_const.max((v - beta.data()[ch]).abs());
            }
        }
    }
    outcome(
        worst_mean < 1e-5 && worst_var < 1e-3 && worst_const < 1e-9,
        format!("max |mean| {worst_mean:.1e} (<1e-5), max |var-1| {worst_var:.1e} (<1e-3), constant channel |out-β| {worst_const:.1e}"),
    )
}

// --------------------------------------------------------------------- gram

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n * n)
            .filter(|k| k / n != k % n)
            .map(|k| a[k] * a[k])
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
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
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

fn gram_invariants() -> Outcome {
    let mut symmetric = true;
    let mut worst_eig = f64::INFINITY;
    let mut worst_self = 0.0f64;
    for seed in SEEDS {
        // more channels than pixels gives a singular gram
        for shape in [[1, 5, 4, 4], [1, 6, 2, 2]] {
            let f = randn(&shape, seed);
            let g = gram_value(&f).unwrap();
            let c = shape[1];
            let d = g.data();
            symmetric &=
                (0..c).all(|i| (0..c).all(|j| d[i * c + j].to_bits() == d[j * c + i].to_bits()));
            let eig = symmetric_eigenvalues(d, c);
            let top = eig.iter().cloned().fold(0.0, f64::max);
            worst_eig = worst_eig.min(eig.iter().cloned().fold(f64::INFINITY, f64::min) / top);
        }
        let mut g = Graph::new();
        let x = g.input(randn(&[2, 4, 3, 5], seed));
        let target = gram(&mut g, x).unwrap();
        let loss = style_layer_loss(&mut g, x, target).unwrap();
        worst_self = worst_self.max(g.value(loss).item().unwrap().abs());
    }
    outcome(
        symmetric && worst_eig >= -1e-8 && worst_self == 0.0,
        format!("symmetric bitwise {symmetric}, min eigenvalue/max {worst_eig:.1e} (>= -1e-8), self loss {worst_self:e}"),
    )
}

// ---------------------------------------------------------------------- ema

fn ema_balancing() -> Outcome {
    let raw = [0.3, 7.0, 1e-3, 42.0];
    let mut state = EmaState::new(4, 0.99).unwrap();
    state.values = raw.to_vec();
    state.initialized = vec![true; 4];
    let out = ema_normalize(&raw, &mut state).unwrap();
    let sum: f64 = raw.iter().sum();
    let worst_rel = out
        .losses
        .iter()
        .map(|v| ((v - sum) / sum).abs())
        .fold(0.0, f64::max);

    // ±10% jitter alone keeps layers within (1.1/0.9)² ≈ 1.49 of each
    // other, so the bound isolates the 1000x scale spread
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scales = [1.0, 10.0, 100.0, 1000.0];
    let mut state = EmaState::new(4, 0.99).unwrap();
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let raw: Vec<f64> = scales
            .iter()
            .map(|s| s * rng.random_range(0.9..1.1))
            .collect();
        let n = ema_normalize(&raw, &mut state).unwrap().losses;
        let max = n.iter().cloned().fold(f64::MIN, f64::max);
        let min = n.iter().cloned().fold(f64::MAX, f64::min);
        worst_ratio = worst_ratio.max(max / min);
    }
    outcome(
        worst_rel < 1e-9 && worst_ratio < 2.0,
        format!("steady state rel err {worst_rel:.1e} (<1e-9), worst max/min over 100 steps with 1000x raw spread {worst_ratio:.3} (<2)"),
    )
}

// ----------------------------------------------------------------- training

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        image_size: SIZE,
        batch_size: 8,
        iterations: ITERATIONS,
        seed,
        extractor: ExtractorSpec::toy(),
        stylizer: StylizerConfig {
            channels: [8, 16, 32],
            residual_blocks: 3,
            edge_kernel: 9,
        },
        predictor: PredictorConfig {
            width: 100,
            hidden_layers: 2,
            ..PredictorConfig::full()
        },
        adam: AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn style_tensor() -> Tensor<f32> {
    to_tensor(&[&synth::style_image(9, SIZE as u32)]).unwrap()
}

fn train_set() -> ContentSet {
    ContentSet::from_images(
        (0..TRAIN_IMAGES)
            .map(|i| synth::content_image(i, 64))
            .collect(),
        SIZE,
    )
    .unwrap()
}

fn held_out() -> Tensor<f32> {
    let set = ContentSet::from_images(
        (0..HELD_OUT)
            .map(|i| synth::content_image(100_000 + i, 64))
            .collect(),
        SIZE,
    )
    .unwrap();
    set.batch(&(0..HELD_OUT as usize).collect::<Vec<_>>())
        .unwrap()
}

struct Trained {
    seed: u64,
    state: Checkpoint,
    sweeps: Vec<SweepReport>,
    one_hot: OneHotReport,
    secs: f64,
    totals: Vec<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn train_and_evaluate(seed: u64, content: &Tensor<f32>) -> Trained {
    let start = Instant::now();
    let ck = initial_checkpoint(&desk_config(seed), &style_tensor()).unwrap();
    let mut trainer = Trainer::from_parts(ck, train_set()).unwrap();
    let mut totals = Vec::new();
    let mut record = |r: &arst_core::training::StepRecord| totals.push(r.total);
    trainer
        .run(
            ITERATIONS,
            RunSinks {
                on_step: Some(&mut record),
                ..RunSinks::default()
            },
        )
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let factors = trainer.state.ema.factors().unwrap();
    let model = &trainer.state.model;
    let sweeps = sweep_eval(
        model,
        content,
        &factors,
        &GRID,
        &[OthersMode::Zeros, OthersMode::Ones],
    )
    .unwrap();
    let one_hot = one_hot_eval(model, content, &factors).unwrap();
    Trained {
        seed,
        state: trainer.state,
        sweeps,
        one_hot,
        secs,
        totals,
    }
}

fn monotonicity(runs: &[Trained]) -> Outcome {
    let mut passing_seeds = 0;
    let mut lines = Vec::new();
    for r in runs {
        let zeros = r
            .sweeps
            .iter()
            .find(|s| s.mode == OthersMode::Zeros)
            .unwrap();
        let negative = zeros.layers.iter().filter(|l| l.spearman < 0.0).count();
        let drops = zeros
            .layers
            .iter()
            .filter(|l| l.endpoint_change().unwrap() < 0.0)
            .count();
        let ok = negative >= 2 && drops == STYLE_LAYERS.len();
        passing_seeds += ok as usize;
        let rhos: Vec<String> = zeros
            .layers
            .iter()
            .map(|l| format!("{:+.2}", l.spearman))
            .collect();
        let changes: Vec<String> = zeros
            .layers
            .iter()
            .map(|l| {
                format!(
                    "{:+.1}%",
                    100.0 * l.endpoint_change().unwrap() / l.points[0].1
                )
            })
            .collect();
        lines.push(format!(
            "seed {} rho [{}] drop(0->1) [{}] {}",
            r.seed,
            rhos.join(" "),
            changes.join(" "),
            if ok { "ok" } else { "no" }
        ));
    }
    outcome(
        passing_seeds >= 2,
        format!(
            "{passing_seeds}/{} seeds with rho<0 in >=2 layers and a drop in all 3; {}",
            runs.len(),
            lines.join("; ")
        ),
    )
}

fn one_hot_trend(runs: &[Trained]) -> Outcome {
    let mut lines = Vec::new();
    let mut best = 0;
    for r in runs {
        let own = (0..STYLE_LAYERS.len())
            .filter(|&j| r.one_hot.largest_at_own_layer(j))
            .count();
        best = best.max(own);
        let rows: Vec<String> = r
            .one_hot
            .reduction
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| format!("{v:+.2}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        lines.push(format!(
            "seed {} own-largest {own}/3 reductions [{}]",
            r.seed,
            rows.join(" | ")
        ));
    }
    // "same training run": judged on the first seed, others reported
    let first = (0..STYLE_LAYERS.len())
        .filter(|&j| runs[0].one_hot.largest_at_own_layer(j))
        .count();
    outcome(first >= 2, lines.join("; "))
}

fn determinism() -> Outcome {
    let config = TrainConfig {
        iterations: 50,
        ..desk_config(11)
    };
    let content =
        ContentSet::from_images((0..16).map(|i| synth::content_image(i, 64)).collect(), SIZE)
            .unwrap();
    let run = |k: u64, from: Option<Checkpoint>| {
        let ck = from.unwrap_or_else(|| initial_checkpoint(&config, &style_tensor()).unwrap());
        let mut t = Trainer::from_parts(ck, content.clone()).unwrap();
        t.run(k, RunSinks::default()).unwrap();
        t.state
    };
    let a = run(50, None).encode().unwrap();
    let b = run(50, None).encode().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k1.arst");
    run(20, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let round_trip = std::fs::read(&path).unwrap() == loaded.encode().unwrap();
    let resumed = run(30, Some(loaded)).encode().unwrap();

    outcome(
        a == b && round_trip && resumed == a,
        format!(
            "50-iteration reruns identical {}, save/load bit-exact {round_trip}, resume(20)+30 == train(50) {}",
            a == b,
            resumed == a
        ),
    )
}

fn throughput(state: &Checkpoint) -> Outcome {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let img = synth::content_image(7, 128);
    let png = encode_png(&img).unwrap();
    let (wall, fps, status) = rt.block_on(async {
        let app = router(Arc::new(
            AppState::new(state.clone(), ServeOptions::default()).unwrap(),
        ));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        let client = reqwest::Client::new();
        let mut wall = Vec::new();
        let mut status = 0;
        for _ in 0..3 {
            let form = reqwest::multipart::Form::new()
                .part(
                    "image",
                    reqwest::multipart::Part::bytes(png.clone()).file_name("c.png"),
                )
                .text("params", r#"{"alpha_s":[0.5,0.5,0.5],"noise":null}"#);
            let t = Instant::now();
            let r = client
                .post(format!("{base}/api/stylize"))
                .multipart(form)
                .send()
                .await
                .unwrap();
            status = r.status().as_u16();
            let body = r.bytes().await.unwrap();
            wall.push(t.elapsed().as_secs_f64());
            assert!(!body.is_empty());
        }
        let m: serde_json::Value = client
            .get(format!("{base}/api/metrics"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        (wall, m["fps"].as_f64().unwrap_or(0.0), status)
    });
    let worst = wall.iter().cloned().fold(0.0, f64::max);

    // Λ overhead: full forward against the stylizer with precomputed γ, β
    let content = to_tensor::<f32>(&[&img]).unwrap();
    let alpha = [0.5, 0.5, 0.5];
    let params = state.model.predictor.predict(&alpha).unwrap();
    let reps = 5;
    let t = Instant::now();
    for _ in 0..reps {
        state.model.stylize(&content, &alpha).unwrap();
    }
    let with = t.elapsed().as_secs_f64() / reps as f64;
    let t = Instant::now();
    for _ in 0..reps {
        state.model.stylizer.stylize(&content, &params).unwrap();
    }
    let without = t.elapsed().as_secs_f64() / reps as f64;
    outcome(
        status == 200 && worst < 2.0 && fps > 0.0,
        format!(
            "128x128 over HTTP worst {worst:.3}s (<2s), /api/metrics fps {fps:.2}; forward with predictor {:.1} ms vs without {:.1} ms, ratio {:.3} (reported only)",
            with * 1e3,
            without * 1e3,
            with / without
        ),
    )
}

fn randomization(state: &Checkpoint, content: &Tensor<f32>) -> Outcome {
    let one = Tensor::from_vec(
        &[1, 3, SIZE, SIZE],
        content.data()[..3 * SIZE * SIZE].to_vec(),
    )
    .unwrap();
    let outputs: Vec<Vec<u8>> = (0..10u64)
        .map(|seed| {
            let r = randomized_stylize(&state.model, &one, 1000 + seed).unwrap();
            from_tensor(&r.output, 0).unwrap().into_raw()
        })
        .collect();
    let mut min_diff = f64::INFINITY;
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            let d = outputs[i]
                .iter()
                .zip(&outputs[j])
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum::<f64>()
                / outputs[i].len() as f64;
            min_diff = min_diff.min(d);
        }
    }
    let repeat = (0..10u64).all(|seed| {
        let a = randomized_stylize(&state.model, &one, 1000 + seed).unwrap();
        encode_png(&from_tensor(&a.output, 0).unwrap()).unwrap()
            == encode_png(
                &from_tensor(
                    &randomized_stylize(&state.model, &one, 1000 + seed)
                        .unwrap()
                        .output,
                    0,
                )
                .unwrap(),
            )
            .unwrap()
    });
    outcome(
        min_diff > 0.0 && repeat,
        format!("10 seeds, min pairwise mean |Δpixel| {min_diff:.3} (>0), fixed seeds byte-identical {repeat}"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!(
            "{} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o));
    };
    report("gradient correctness", gradient_correctness());
    report("normalization invariants", normalization_invariants());
    report("gram invariants", gram_invariants());
    report("ema balancing", ema_balancing());
    report("determinism and checkpoints", determinism());

    let content = held_out();
    let runs: Vec<Trained> = TRAIN_SEEDS
        .iter()
        .map(|&s| train_and_evaluate(s, &content))
        .collect();
    for r in &runs {
        let first = median(r.totals[..100].to_vec());
        let last = median(r.totals[r.totals.len() - 100..].to_vec());
        println!(
            "  trained seed {} for {ITERATIONS} iterations in {:.0}s; median total loss first 100 {first:.3}, last 100 {last:.3} ({})",
            r.seed,
            r.secs,
            if last < first { "decreased" } else { "did not decrease" }
        );
    }
    report("style weight monotonicity", monotonicity(&runs));
    report("one-hot equivalence trend", one_hot_trend(&runs));
    report("throughput", throughput(&runs[0].state));
    report("randomization", randomization(&runs[0].state, &content));

    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| !o.passed)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
