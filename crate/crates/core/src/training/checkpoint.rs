//! Training state stored as one weight file.
//!
//! Tensor names: `stylizer.*`, `predictor.*`, `targets.<layer>`,
//! `adam.m.<param>` and `adam.v.<param>`; reserved records `__config`
//! (JSON), `__state` (JSON), `__ema.values` and `__ema.initialized`.

use std::collections::HashSet;
use std::path::Path;

use arst_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{EmaState, StyleTargets, STYLE_LAYERS};
use crate::model::Model;
use crate::networks::{FeatureExtractor, ParamStore, Predictor, Stylizer, WeightFile};

const KIND: &str = "arst-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub ema: EmaState,
    pub adam: AdamState<f32>,
    /// Completed training iterations.
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    kind: String,
    iteration: u64,
    adam_t: u64,
    extractor_id: String,
}

impl Checkpoint {
    fn param_names(&self) -> Vec<String> {
        let s = self
            .model
            .stylizer
            .params
            .names()
            .map(|n| format!("stylizer.{n}"));
        let p = self
            .model
            .predictor
            .params
            .names()
            .map(|n| format!("predictor.{n}"));
        s.chain(p).collect()
    }

    pub fn to_weight_file(&self) -> Result<WeightFile> {
        let mut w = WeightFile::new();
        w.insert_blob("config", &serde_json::to_vec(&self.config)?)?;
        let state = StateRecord {
            kind: KIND.into(),
            iteration: self.iteration,
            adam_t: self.adam.t,
            extractor_id: self.model.extractor.id.clone(),
        };
        w.insert_blob("state", &serde_json::to_vec(&state)?)?;
        let n = self.ema.values.len();
        w.insert(
            "__ema.values",
            &Tensor::from_vec(&[n], self.ema.values.clone())?,
        )?;
        let flags = self
            .ema
            .initialized
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        w.insert("__ema.initialized", &Tensor::<f64>::from_vec(&[n], flags)?)?;
        for (name, t) in self.param_names().iter().zip(self.model.trainable()) {
            w.insert(name.clone(), t)?;
        }
        for (layer, g) in STYLE_LAYERS.iter().zip(&self.model.targets.grams) {
            w.insert(format!("targets.{layer}"), g)?;
        }
        for (i, name) in self.param_names().iter().enumerate() {
            w.insert(format!("adam.m.{name}"), &self.adam.m[i])?;
            w.insert(format!("adam.v.{name}"), &self.adam.v[i])?;
        }
        Ok(w)
    }

    /// Rebuild from a weight file; names the loader does not recognize are
    /// returned alongside.
    pub fn from_weight_file(w: &WeightFile) -> Result<(Self, Vec<String>)> {
        let config: TrainConfig = serde_json::from_slice(&w.blob("config")?)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let state: StateRecord = serde_json::from_slice(&w.blob("state")?)
            .map_err(|e| Error::Format(format!("checkpoint state: {e}")))?;
        if state.kind != KIND {
            return Err(Error::Format(format!("not a checkpoint: {}", state.kind)));
        }
        let extractor = FeatureExtractor::from_spec(&config.extractor)?;
        if extractor.id != state.extractor_id {
            return Err(Error::Format(format!(
                "checkpoint was trained with extractor {}, configuration builds {}",
                state.extractor_id, extractor.id
            )));
        }
        let mut known: HashSet<&str> =
            ["__config", "__state", "__ema.values", "__ema.initialized"].into();
        let collect = |prefix: &str| {
            let mut store = ParamStore::default();
            for (name, stored) in w.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    store.push(rest, stored.to::<f32>());
                }
            }
            store
        };
        let stylizer = Stylizer::from_params(config.stylizer.clone(), collect("stylizer."))?;
        let sites = stylizer.norm_sites();
        let predictor =
            Predictor::from_params(config.predictor.clone(), sites, collect("predictor."))?;
        let grams = STYLE_LAYERS
            .iter()
            .map(|l| w.tensor::<f32>(&format!("targets.{l}")))
            .collect::<Result<Vec<_>>>()?;
        let model = Model {
            stylizer,
            predictor,
            extractor,
            targets: StyleTargets { grams },
        };
        let values: Tensor<f64> = w.tensor("__ema.values")?;
        let flags: Tensor<f64> = w.tensor("__ema.initialized")?;
        let mut ema = EmaState::new(values.numel(), config.ema_decay)?;
        ema.values = values.data().to_vec();
        ema.initialized = flags.data().iter().map(|&f| f != 0.0).collect();
        let mut ck = Checkpoint {
            config,
            model,
            ema,
            adam: AdamState {
                t: state.adam_t,
                m: Vec::new(),
                v: Vec::new(),
            },
            iteration: state.iteration,
        };
        let names = ck.param_names();
        for (name, p) in names.iter().zip(ck.model.trainable().collect::<Vec<_>>()) {
            let m: Tensor<f32> = w.tensor(&format!("adam.m.{name}"))?;
            let v: Tensor<f32> = w.tensor(&format!("adam.v.{name}"))?;
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::Format(format!(
                    "optimizer moments of {name} have the wrong shape"
                )));
            }
            ck.adam.m.push(m);
            ck.adam.v.push(v);
        }
        let owned: Vec<String> = names
            .iter()
            .flat_map(|n| [n.clone(), format!("adam.m.{n}"), format!("adam.v.{n}")])
            .chain(STYLE_LAYERS.iter().map(|l| format!("targets.{l}")))
            .collect();
        known.extend(owned.iter().map(String::as_str));
        let extras = w.extras(&known).into_iter().map(String::from).collect();
        Ok((ck, extras))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(self.to_weight_file()?.encode())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_weight_file()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (ck, extras) = Self::from_weight_file(&WeightFile::load(path)?)?;
        if !extras.is_empty() {
            log::warn!("{}: ignoring unknown tensors {extras:?}", path.display());
        }
        Ok(ck)
    }

    /// Short content hash identifying this exact state.
    pub fn id(&self) -> Result<String> {
        Ok(format!("{:08x}", crc32fast::hash(&self.encode()?)))
    }
}
