//! Loss, optimization, data splitting protocols and evaluation.

mod metrics;
mod optim;
mod split;

pub use metrics::{ConfusionMatrix, MetricsReport};
pub use optim::{adam_step, AdamHyper, AdamState, PlateauScheduler, SchedulerConfig};
pub use split::{stratified_kfold, stratified_split, Fold};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::ClipTensor;
use crate::model::{self, init_params, ModelConfig, ModelParams, Mode};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub scheduler: SchedulerConfig,
    pub early_stop_patience: usize,
    pub k_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            scheduler: SchedulerConfig::default(),
            early_stop_patience: 5,
            k_folds: 4,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.k_folds < 2 {
            return Err(Error::InvalidConfig(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamHyper {
        AdamHyper { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// Mean `-log softmax(logits)[label]` over the rows of `logits`.
pub fn cross_entropy<R: Real>(logits: &Tensor<R>, labels: &[usize]) -> Result<R> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, labels)?;
    Ok(tape.value(loss).values()[0])
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

fn labels_of(clips: &[ClipTensor]) -> Result<Vec<usize>> {
    clips.iter().enumerate().map(|(i, c)| c.label_index().ok_or(Error::MissingLabel(i))).collect()
}

const EVAL_BATCH: usize = 64;

/// Eval-mode logits for a whole dataset, batched.
pub fn dataset_logits(params: &ModelParams, config: &ModelConfig, clips: &[ClipTensor]) -> Result<Vec<Vec<f32>>> {
    let mut rows = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(EVAL_BATCH) {
        let out = model::logits(params, config, chunk)?;
        rows.extend((0..out.rows()).map(|r| out.row(r).to_vec()));
    }
    Ok(rows)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Eval-mode classification of `dataset` into a confusion matrix and scores.
pub fn evaluate(params: &ModelParams, config: &ModelConfig, dataset: &[ClipTensor]) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = labels_of(dataset)?;
    let predicted: Vec<usize> = dataset_logits(params, config, dataset)?.iter().map(|l| argmax(l)).collect();
    MetricsReport::from_predictions(&labels, &predicted, config.num_classes)
}

fn loss_and_accuracy(params: &ModelParams, config: &ModelConfig, clips: &[ClipTensor]) -> Result<(f64, f64)> {
    let labels = labels_of(clips)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut offset = 0;
    for chunk in clips.chunks(EVAL_BATCH) {
        let out = model::logits(params, config, chunk)?;
        let chunk_labels = &labels[offset..offset + chunk.len()];
        total += cross_entropy(&out, chunk_labels)? as f64 * chunk.len() as f64;
        correct += (0..out.rows()).filter(|&r| argmax(out.row(r)) == chunk_labels[r]).count();
        offset += chunk.len();
    }
    Ok((total / clips.len() as f64, correct as f64 / clips.len() as f64))
}

/// Trains from a fresh initialization seeded by `train_config.seed`.
pub fn train_loop(
    train: &[ClipTensor],
    val: &[ClipTensor],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let params = init_params(model_config, train_config.seed)?;
    train_from(params, train, val, model_config, train_config, on_epoch)
}

/// Mini-batch Adam with per-epoch shuffling, validation, plateau scheduling
/// and early stopping.
pub fn train_from(
    initial: ModelParams,
    train: &[ClipTensor],
    val: &[ClipTensor],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    initial.validate(model_config)?;
    let train_labels = labels_of(train)?;
    labels_of(val)?;
    if let Some(&bad) = train_labels.iter().find(|&&l| l >= model_config.num_classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes: model_config.num_classes });
    }

    // stream for shuffling and dropout; init draws from its own seeded stream
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed ^ 0x005e_ed0f_da7a);
    let mut params = initial;
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut stale = 0;
    let mut adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
    let mut scheduler = PlateauScheduler::new(train_config.learning_rate, train_config.scheduler.clone());
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..train_config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let clips: Vec<ClipTensor> = batch.iter().map(|&i| train[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = model::loss_and_grads(&params, model_config, &clips, &labels, Mode::Train, &mut rng)?;
            loss_sum += loss as f64 * batch.len() as f64;
            let grads: Vec<&Tensor<f32>> = grads_in_order(&grads);
            let mut slots = params.slots_mut();
            adam_step(&mut slots, &grads, &mut adam, &train_config.adam(lr))?;
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&params, model_config, val)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_accuracy, lr };
        on_epoch(&record);
        log.push(record);
        scheduler.update(val_loss);

        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_config.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best, log, best_epoch })
}

fn grads_in_order(grads: &ModelParams) -> Vec<&Tensor<f32>> {
    grads.named().into_iter().map(|(_, t)| t).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: Option<usize>,
    pub validation: MetricsReport,
    pub test: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub recall_micro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
}

impl MeanMetrics {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Option<Self> {
        let reports: Vec<&MetricsReport> = reports.into_iter().collect();
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(Self {
            accuracy: mean(|r| r.accuracy),
            recall_micro: mean(|r| r.recall_micro),
            recall_macro: mean(|r| r.recall_macro),
            f1_macro: mean(|r| r.f1_macro),
            f1_weighted: mean(|r| r.f1_weighted),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub validation_mean: MeanMetrics,
    pub test_mean: Option<MeanMetrics>,
}

/// Trains one independent model per stratified fold of `data` and scores it
/// on the held-out fold (and on `test`, when given).
pub fn cross_validate(
    data: &[ClipTensor],
    test: Option<&[ClipTensor]>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<CrossValReport> {
    let labels = labels_of(data)?;
    let folds = stratified_kfold(&labels, train_config.k_folds, train_config.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let pick = |idx: &[usize]| idx.iter().map(|&j| data[j].clone()).collect::<Vec<_>>();
        let (train, val) = (pick(&fold.train), pick(&fold.validation));
        let cfg = TrainConfig { seed: train_config.seed.wrapping_add(i as u64 + 1), ..train_config.clone() };
        let outcome = train_loop(&train, &val, model_config, &cfg, |r| on_epoch(i, r))?;
        let validation = evaluate(&outcome.params, model_config, &val)?;
        let test = test.map(|t| evaluate(&outcome.params, model_config, t)).transpose()?;
        reports.push(FoldReport { fold: i, best_epoch: outcome.best_epoch, validation, test });
    }
    let validation_mean = MeanMetrics::of(reports.iter().map(|r| &r.validation)).expect("k >= 2");
    let test_mean = MeanMetrics::of(reports.iter().filter_map(|r| r.test.as_ref()));
    Ok(CrossValReport { folds: reports, validation_mean, test_mean })
}
