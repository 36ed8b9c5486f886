use std::path::Path;

use arst_tensor::{Graph, Tensor, TensorError};
use rand::Rng;

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::data::{load_style, ContentSet};
use super::metrics::{MetricsLog, StepRecord};
use crate::error::{Error, Result};
use crate::losses::{ema_normalize, AlphaVector, EmaState, CONTENT_LAYERS, STYLE_LAYERS};
use crate::model::{precompute_style_grams, Model};
use crate::networks::{FeatureExtractor, Predictor, Stylizer};
use crate::rng::{stream_rng, Stream};

/// α_c = 1 and each α_s uniform on [0, 1).
pub fn sample_alpha(rng: &mut impl Rng) -> AlphaVector {
    AlphaVector {
        content: vec![1.0; CONTENT_LAYERS.len()],
        style: (0..STYLE_LAYERS.len())
            .map(|_| rng.random::<f64>())
            .collect(),
    }
}

/// Fresh model and optimizer state for `config`.
pub fn initial_checkpoint(config: &TrainConfig, style: &Tensor<f32>) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Init, 0);
    let stylizer = Stylizer::init(config.stylizer.clone(), config.init_stddev, &mut rng)?;
    let predictor = Predictor::init(
        config.predictor.clone(),
        stylizer.norm_sites(),
        config.init_stddev,
        &mut rng,
    )?;
    let extractor = FeatureExtractor::from_spec(&config.extractor)?;
    let targets = precompute_style_grams(style, &extractor)?;
    let model = Model {
        stylizer,
        predictor,
        extractor,
        targets,
    };
    let adam = AdamState::new(model.trainable().map(|t| t.shape()))?;
    let ema = EmaState::new(CONTENT_LAYERS.len() + STYLE_LAYERS.len(), config.ema_decay)?;
    Ok(Checkpoint {
        config: config.clone(),
        model,
        ema,
        adam,
        iteration: 0,
    })
}

/// Joint optimization of the stylizer and predictor.
pub struct Trainer {
    pub state: Checkpoint,
    pub content: ContentSet,
}

/// Where `run` reports progress.
#[derive(Default)]
pub struct RunSinks<'a> {
    pub metrics: Option<&'a mut MetricsLog>,
    /// Periodic checkpoints and the last good state on abort go here.
    pub checkpoint: Option<&'a Path>,
    pub on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
}

fn as_numeric(e: Error) -> Error {
    match e {
        Error::Tensor(t @ TensorError::Numeric { .. }) => Error::Numeric(t.to_string()),
        other => other,
    }
}

impl Trainer {
    /// Load data and style from the paths in `config` and initialize.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let style = load_style(&config.style_image, config.image_size)?;
        let content = ContentSet::load(&config.content_dir, config.image_size)?;
        Ok(Self {
            state: initial_checkpoint(config, &style)?,
            content,
        })
    }

    pub fn from_parts(state: Checkpoint, content: ContentSet) -> Result<Self> {
        if content.size != state.config.image_size {
            return Err(Error::Config(format!(
                "content set is {} px, checkpoint trains at {} px",
                content.size, state.config.image_size
            )));
        }
        Ok(Self { state, content })
    }

    /// One iteration with the batch and α drawn from the seed streams.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.state.config;
        let it = self.state.iteration;
        let batch = self
            .content
            .ingest_batch(cfg.batch_size, &mut stream_rng(cfg.seed, Stream::Data, it))?;
        let alpha = sample_alpha(&mut stream_rng(cfg.seed, Stream::Alpha, it));
        self.step_with(&batch, &alpha)
    }

    /// One iteration on a given batch and α. State changes only on success.
    pub fn step_with(&mut self, batch: &Tensor<f32>, alpha: &AlphaVector) -> Result<StepRecord> {
        let mut ema = self.state.ema.clone();
        let (record, grads) =
            gradients(&self.state.model, batch, alpha, &mut ema).map_err(as_numeric)?;
        let record = StepRecord {
            iter: self.state.iteration,
            ..record
        };
        let mut params = self.state.model.trainable_mut();
        adam_step(
            &mut params,
            &grads,
            &mut self.state.adam,
            &self.state.config.adam,
        )?;
        self.state.ema = ema;
        self.state.iteration += 1;
        Ok(record)
    }

    /// Run `iterations` steps. On a numeric failure the last good state is
    /// written to the checkpoint sink before the error is returned.
    pub fn run(&mut self, iterations: u64, mut sinks: RunSinks<'_>) -> Result<()> {
        let every = self.state.config.checkpoint_every;
        for _ in 0..iterations {
            let record = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Error::Numeric(_), Some(path)) = (&e, sinks.checkpoint) {
                        self.state.save(path)?;
                        log::error!(
                            "aborted at iteration {}; last good state in {}",
                            self.state.iteration,
                            path.display()
                        );
                    }
                    if let Some(m) = sinks.metrics.as_deref_mut() {
                        m.flush()?;
                    }
                    return Err(e);
                }
            };
            if let Some(m) = sinks.metrics.as_deref_mut() {
                m.append(&record)?;
            }
            if let Some(f) = sinks.on_step.as_deref_mut() {
                f(&record);
            }
            if let (Some(path), true) = (
                sinks.checkpoint,
                every > 0 && self.state.iteration.is_multiple_of(every),
            ) {
                self.state.save(path)?;
            }
        }
        if let Some(m) = sinks.metrics.as_deref_mut() {
            m.flush()?;
        }
        Ok(())
    }
}

/// Loss record and parameter gradients (stylizer first) for one batch.
///
/// `ema` is advanced by this call; the factors used are those from before
/// the update and enter the graph as constants.
pub fn gradients(
    model: &Model<f32>,
    batch: &Tensor<f32>,
    alpha: &AlphaVector,
    ema: &mut EmaState,
) -> Result<(StepRecord, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let content = g.input(batch.clone());
    let losses = model.layer_losses(&mut g, &vars, content, &alpha.style)?;
    let raw = losses.values(&g);
    let normalized = ema_normalize(&raw, ema)?;
    let total = model.weighted_total(&mut g, &losses, &normalized.factors, alpha)?;
    let total_value = g.value(total).data()[0] as f64;
    if !total_value.is_finite() {
        return Err(Error::Numeric(format!("total loss is {total_value}")));
    }
    g.backward(total)?;
    let grads = vars
        .0
        .iter()
        .chain(&vars.1)
        .map(|&v| match g.grad(v) {
            Some(t) => Ok(t),
            None => Ok(Tensor::zeros(g.shape(v))?),
        })
        .collect::<Result<Vec<_>>>()?;
    let record = StepRecord {
        iter: 0,
        alpha_s: alpha.style.clone(),
        raw,
        normalized: normalized.losses,
        total: total_value,
    };
    Ok((record, grads))
}

/// Initialize from `config` and train for `config.iterations`.
pub fn train(config: &TrainConfig, sinks: RunSinks<'_>) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(config.iterations, sinks)?;
    Ok(trainer.state)
}
