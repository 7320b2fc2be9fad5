//! Flat `key = value` run configuration.
//!
//! Every key is optional and overrides the built-in default:
//!
//! ```toml
//! hidden_dim = 64
//! learning_rate = 1e-3
//! sampler = "fps:15"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::landmark::Sampler;
use crate::model::ModelConfig;
use crate::segment::SegmenterConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub segmenter: SegmenterConfig,
    pub sampler: Sampler,
    pub recenter: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    input_dim: Option<usize>,
    hidden_dim: Option<usize>,
    num_heads: Option<usize>,
    num_layers: Option<usize>,
    ffn_dim: Option<usize>,
    dropout_p: Option<f64>,
    num_classes: Option<usize>,
    max_seq_len: Option<usize>,
    embed_dropout: Option<bool>,
    sublayer_dropout: Option<bool>,
    layer_norm_eps: Option<f64>,

    learning_rate: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    scheduler_factor: Option<f64>,
    scheduler_patience: Option<usize>,
    scheduler_threshold: Option<f64>,
    min_lr: Option<f64>,
    early_stop_patience: Option<usize>,
    k_folds: Option<usize>,
    test_fraction: Option<f64>,
    seed: Option<u64>,

    start_threshold: Option<f64>,
    stop_threshold: Option<f64>,
    start_hold: Option<usize>,
    stop_hold: Option<usize>,
    max_clip_frames: Option<usize>,

    sampler: Option<Sampler>,
    recenter: Option<bool>,
}

macro_rules! apply {
    ($flat:ident => $($target:expr => $key:ident),* $(,)?) => {
        $(if let Some(v) = $flat.$key { $target = v; })*
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_owned()))?;
        let mut c = RunConfig::default();
        apply!(flat =>
            c.model.input_dim => input_dim,
            c.model.hidden_dim => hidden_dim,
            c.model.num_heads => num_heads,
            c.model.num_layers => num_layers,
            c.model.ffn_dim => ffn_dim,
            c.model.dropout_p => dropout_p,
            c.model.num_classes => num_classes,
            c.model.max_seq_len => max_seq_len,
            c.model.embed_dropout => embed_dropout,
            c.model.sublayer_dropout => sublayer_dropout,
            c.model.layer_norm_eps => layer_norm_eps,
            c.train.learning_rate => learning_rate,
            c.train.adam_beta1 => adam_beta1,
            c.train.adam_beta2 => adam_beta2,
            c.train.adam_eps => adam_eps,
            c.train.batch_size => batch_size,
            c.train.max_epochs => max_epochs,
            c.train.scheduler.factor => scheduler_factor,
            c.train.scheduler.patience => scheduler_patience,
            c.train.scheduler.threshold => scheduler_threshold,
            c.train.scheduler.min_lr => min_lr,
            c.train.early_stop_patience => early_stop_patience,
            c.train.k_folds => k_folds,
            c.train.test_fraction => test_fraction,
            c.train.seed => seed,
            c.segmenter.start_threshold => start_threshold,
            c.segmenter.stop_threshold => stop_threshold,
            c.segmenter.start_hold => start_hold,
            c.segmenter.stop_hold => stop_hold,
            c.segmenter.max_clip_frames => max_clip_frames,
            c.sampler => sampler,
            c.recenter => recenter,
        );
        c.train.validate()?;
        c.segmenter.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
