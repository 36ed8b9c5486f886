use std::fs;
use std::path::{Path, PathBuf};

use arst_core::eval::{one_hot_eval, sweep_eval, OneHotReport, OthersMode, SweepReport};
use arst_core::image_io::{encode_png, load_rgb};
use arst_core::losses::STYLE_LAYERS;
use arst_core::networks::{PredictorConfig, StylizerConfig};
use arst_core::training::{Checkpoint, ContentSet, MetricsLog, RunSinks, TrainConfig, Trainer};
use arst_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::alpha::{parse_list, AlphaArg};
use crate::config::overlay_file;
use crate::pipeline::{random_alpha, stylize_image, NoiseRequest};
use crate::service::{self, ServeOptions};

#[derive(Debug, Parser)]
#[command(
    name = "arst",
    version,
    about = "Style transfer with per-layer style weights adjustable at inference time"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a stylizer and weight predictor for one style image.
    Train(TrainArgs),
    /// Stylize one image with a trained checkpoint.
    Stylize(StylizeArgs),
    /// Sweep the style weights over held-out content images.
    Eval(EvalArgs),
    /// Serve the HTTP inference API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Full,
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long)]
    pub content_dir: Option<PathBuf>,
    /// Training crop size in pixels (multiple of 4).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Network widths; `desk` is the reduced CPU configuration.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// TOML file whose keys override the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint for `--iters` more iterations.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.arst")]
    pub out: PathBuf,
    /// Defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// `a,b,c` with each value in [0, 1], or `random:SEED`.
    #[arg(long, default_value = "1,1,1")]
    pub alpha: String,
    /// Apply the content noise mask with this seed.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, requires = "noise_seed")]
    pub noise_k: Option<usize>,
    #[arg(long, requires = "noise_seed")]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub content_dir: PathBuf,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    pub grid: String,
    /// Use only the first N images of the directory.
    #[arg(long)]
    pub images: Option<usize>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Largest accepted image side in pixels.
    #[arg(long, default_value_t = 1024)]
    pub max_side: u32,
    /// Largest accepted request body in bytes.
    #[arg(long, default_value_t = 16 << 20)]
    pub max_bytes: usize,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Config(_)
        | Error::Validation(_)
        | Error::Io(_)
        | Error::Image(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Stylize(a) => stylize(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(a),
    }
}

/// Defaults, then flags, then the config file.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(v) = &a.style {
        c.style_image = v.clone();
    }
    if let Some(v) = &a.content_dir {
        c.content_dir = v.clone();
    }
    c.image_size = a.size.unwrap_or(c.image_size);
    c.iterations = a.iters.unwrap_or(c.iterations);
    c.seed = a.seed.unwrap_or(c.seed);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.adam.lr = a.lr.unwrap_or(c.adam.lr);
    c.checkpoint_every = a.checkpoint_every.unwrap_or(c.checkpoint_every);
    if let Some(p) = a.preset {
        c.stylizer = match p {
            Preset::Full => StylizerConfig::full(),
            Preset::Desk => StylizerConfig::desk(),
        };
        c.predictor = PredictorConfig::full();
    }
    if let Some(path) = &a.config {
        c = overlay_file(&c, path)?;
    }
    c.validate()?;
    Ok(c)
}

fn metrics_path(a: &TrainArgs) -> PathBuf {
    a.metrics
        .clone()
        .unwrap_or_else(|| a.out.with_extension("csv"))
}

fn train(a: &TrainArgs) -> Result<()> {
    let metrics = metrics_path(a);
    let (mut trainer, iterations) = match &a.resume {
        Some(path) => {
            let mut state = Checkpoint::load(path)?;
            let dir = a
                .content_dir
                .clone()
                .unwrap_or_else(|| state.config.content_dir.clone());
            let content = ContentSet::load(&dir, state.config.image_size)?;
            let iterations = a
                .iters
                .unwrap_or(state.config.iterations.saturating_sub(state.iteration));
            // stored as the target count so a resumed run matches an uninterrupted one
            state.config.iterations = state.iteration + iterations;
            (Trainer::from_parts(state, content)?, iterations)
        }
        None => {
            let config = train_config(a)?;
            if metrics.exists() {
                fs::remove_file(&metrics)?;
            }
            let iterations = config.iterations;
            (Trainer::new(&config)?, iterations)
        }
    };
    log::info!(
        "training {} iterations from iteration {} on {} content images",
        iterations,
        trainer.state.iteration,
        trainer.content.len()
    );
    let mut log = MetricsLog::open(&metrics)?;
    let mut progress = |r: &arst_core::training::StepRecord| {
        if r.iter.is_multiple_of(100) {
            log::info!("iter {} total {:.4}", r.iter, r.total);
        }
    };
    trainer.run(
        iterations,
        RunSinks {
            metrics: Some(&mut log),
            checkpoint: Some(&a.out),
            on_step: Some(&mut progress),
        },
    )?;
    trainer.state.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({ "checkpoint": a.out, "metrics": metrics, "iteration": trainer.state.iteration })
    );
    Ok(())
}

fn stylize(a: &StylizeArgs) -> Result<()> {
    let alpha: AlphaArg = a.alpha.parse().map_err(Error::Validation)?;
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let img = load_rgb(&a.input)?;
    let explicit_noise = a.noise_seed.map(|seed| NoiseRequest {
        seed,
        k: a.noise_k,
        sigma: a.noise_sigma,
    });
    let (alpha_s, noise) = match alpha {
        AlphaArg::Fixed(v) => (v, explicit_noise),
        AlphaArg::Random(seed) => (
            random_alpha(seed).style,
            explicit_noise.or(Some(NoiseRequest {
                seed,
                k: None,
                sigma: None,
            })),
        ),
    };
    let out = stylize_image(&model, &img, &alpha_s, noise)?;
    fs::write(&a.output, encode_png(&out.image)?)?;
    println!(
        "{}",
        serde_json::json!({ "alpha_s": out.alpha_s, "noise": out.noise, "crop": out.crop })
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub images: usize,
    pub sweeps: Vec<SweepReport>,
    pub one_hot: OneHotReport,
}

/// Sweep in both modes plus the one-hot comparison.
pub fn evaluate(
    state: &Checkpoint,
    content: &ContentSet,
    grid: &[f64],
    images: Option<usize>,
) -> Result<EvalReport> {
    let n = images.unwrap_or(content.len()).min(content.len());
    let batch = content.batch::<f32>(&(0..n).collect::<Vec<_>>())?;
    let factors = state.ema.factors()?;
    let sweeps = sweep_eval(
        &state.model,
        &batch,
        &factors,
        grid,
        &[OthersMode::Zeros, OthersMode::Ones],
    )?;
    let one_hot = one_hot_eval(&state.model, &batch, &factors)?;
    Ok(EvalReport {
        checkpoint_id: state.id()?,
        images: n,
        sweeps,
        one_hot,
    })
}

fn eval(a: &EvalArgs) -> Result<()> {
    let grid = parse_list(&a.grid).map_err(Error::Validation)?;
    let state = Checkpoint::load(&a.checkpoint)?;
    let content = ContentSet::load(&a.content_dir, state.config.image_size)?;
    let report = evaluate(&state, &content, &grid, a.images)?;
    for s in &report.sweeps {
        for l in &s.layers {
            let medians: Vec<String> = l
                .points
                .iter()
                .map(|(t, m)| format!("{t}:{m:.4e}"))
                .collect();
            println!(
                "{:?} {} rho={:+.3} {}",
                s.mode,
                l.layer,
                l.spearman,
                medians.join(" ")
            );
        }
    }
    for (j, name) in STYLE_LAYERS.iter().enumerate() {
        println!(
            "one-hot {name} reduction {:?} own-largest={}",
            report.one_hot.reduction[j],
            report.one_hot.largest_at_own_layer(j)
        );
    }
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = Checkpoint::load(&a.checkpoint)?;
    let opts = ServeOptions {
        max_side: a.max_side,
        max_bytes: a.max_bytes,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        service::serve(listener, state, opts).await
    })
}
