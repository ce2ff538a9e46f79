use alloc::vec::Vec;

use crate::augment::{augment_with, AffineParams, AugmentConfig};
use crate::autodiff::Graph;
use crate::batch::{epoch_batches, rng_for};
use crate::dac::backbone::{BackboneConfig, Model};
use crate::dac::pairs::{
    cluster_assign, generate_pair_labels, update_thresholds, SimilarityMatrix, ThresholdState,
    LOG_CLAMP,
};
use crate::data::ImageSet;
use crate::metrics::{score, Partition, Scores};
use crate::nn::Mode;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

/// Settings for the inner training loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    /// Label the self-pairs (i, i) like any other pair.
    pub include_diagonal: bool,
    /// Chunk size for eval-mode inference.
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            include_diagonal: true,
            eval_batch: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean loss over the batches that trained.
    pub mean_loss: f64,
    /// Mean fraction of selected pairs per batch, skipped batches included.
    pub selected_fraction: f64,
    pub batches: usize,
    pub skipped: usize,
}

const AUGMENT_STREAM: u64 = 0xa06;

/// One pass over shuffled minibatches of augmented views. Only images
/// are read; ground truth never reaches this path.
pub fn train_epoch(
    model: &mut Model,
    images: &Tensor,
    thresholds: &ThresholdState,
    optimizer: &mut Adam,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochStats> {
    let n = images.shape()[0];
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    cfg.augment.validate()?;
    let batches = epoch_batches(n, cfg.batch_size, cfg.seed, epoch)?;
    let aug_epoch = if cfg.augment.resample_per_epoch {
        epoch + 1
    } else {
        0
    };
    let mut loss_sum = 0.0;
    let mut frac_sum = 0.0;
    let mut trained = 0;
    let mut skipped = 0;
    for idx in &batches {
        let raw = images.select_rows(idx);
        let batch = if cfg.augment.is_identity() {
            raw
        } else {
            let params: Vec<AffineParams> = idx
                .iter()
                .map(|&i| {
                    AffineParams::sample(
                        &cfg.augment,
                        &mut rng_for(cfg.seed, &[AUGMENT_STREAM, aug_epoch, i as u64]),
                    )
                })
                .collect();
            augment_with(&raw, &params)?
        };

        let mut g = Graph::new();
        let x = g.input(batch);
        let out = model.forward(&mut g, x, Mode::Train)?;
        let sim = g.gram(out.features)?;
        let s = SimilarityMatrix::from_tensor(g.value(sim).clone())?;
        let labels = generate_pair_labels(&s, thresholds, cfg.include_diagonal);
        let m = idx.len();
        frac_sum += labels.selected() as f64 / (m * m) as f64;
        let loss = match g.pair_loss(sim, &labels.targets(), &labels.weights(), LOG_CLAMP) {
            Ok(l) => l,
            Err(Error::NoSelectedPairs) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        loss_sum += g.value(loss).data()[0];
        g.backward(loss)?;
        model.params.zero_grads();
        model.params.accumulate_grads(&g);
        drop(g);
        optimizer.step(&mut model.params)?;
        trained += 1;
    }
    if trained == 0 {
        return Err(Error::EpochFullySkipped);
    }
    Ok(EpochStats {
        mean_loss: loss_sum / trained as f64,
        selected_fraction: frac_sum / batches.len() as f64,
        batches: batches.len(),
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub thresholds: ThresholdState,
    pub max_epochs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            thresholds: ThresholdState::mnist(),
            max_epochs: 20,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub selected_fraction: f64,
    pub skipped_batches: usize,
    /// `None` when the data carries no ground truth.
    pub scores: Option<Scores>,
    /// Thresholds in force during the epoch.
    pub lambda: f64,
    pub upper: f64,
    pub lower: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: Model,
    /// Metrics of the untrained network.
    pub initial: Option<Scores>,
    pub history: Vec<EpochRecord>,
    /// Epoch and parameters with the best accuracy seen.
    pub best: Option<(usize, ParamStore)>,
    /// Training ended because the threshold schedule closed.
    pub schedule_stopped: bool,
}

fn evaluate(model: &mut Model, data: &ImageSet, chunk: usize) -> Result<Option<Scores>> {
    let Some(truth) = data.labels() else {
        return Ok(None);
    };
    let f = model.label_features(data.images(), chunk)?;
    let pred = cluster_assign(&f);
    score(&pred, &Partition::from(truth)).map(Some)
}

/// Trains until the threshold schedule closes or `max_epochs` pass,
/// evaluating on the full (unaugmented) data after every epoch.
/// `observer` sees each record as soon as it exists.
pub fn fit(
    cfg: &FitConfig,
    data: &ImageSet,
    mut observer: impl FnMut(&EpochRecord, &Model),
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut model = Model::new(cfg.backbone, cfg.train.seed)?;
    let mut optimizer = Adam::new(cfg.train.adam, &model.params);
    let initial = evaluate(&mut model, data, cfg.train.eval_batch)?;
    let mut best: Option<(usize, ParamStore)> = None;
    let mut best_acc = f64::NEG_INFINITY;
    if let Some(s) = initial {
        best_acc = s.acc;
        best = Some((0, model.params.clone()));
    }
    let mut thresholds = cfg.thresholds;
    let mut history = Vec::new();
    let mut schedule_stopped = false;
    for epoch in 0..cfg.max_epochs {
        let stats = train_epoch(
            &mut model,
            data.images(),
            &thresholds,
            &mut optimizer,
            &cfg.train,
            epoch as u64,
        )?;
        let scores = evaluate(&mut model, data, cfg.train.eval_batch)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: stats.mean_loss,
            selected_fraction: stats.selected_fraction,
            skipped_batches: stats.skipped,
            scores,
            lambda: thresholds.lambda,
            upper: thresholds.upper(),
            lower: thresholds.lower(),
        };
        if let Some(s) = scores {
            if s.acc > best_acc {
                best_acc = s.acc;
                best = Some((epoch + 1, model.params.clone()));
            }
        }
        observer(&record, &model);
        history.push(record);
        let up = update_thresholds(&thresholds);
        thresholds = up.state;
        if up.stop {
            schedule_stopped = true;
            break;
        }
    }
    Ok(FitResult {
        model,
        initial,
        history,
        best,
        schedule_stopped,
    })
}
