//! Deep adaptive clustering (DAC* variant): label features from the
//! backbone, pairwise similarities, threshold-selected pseudo pair labels,
//! the pairwise loss and the training loop.

mod backbone;
mod pairs;
mod train;

pub use backbone::{BackboneConfig, ForwardOutput, Model, StPlacement};
pub use pairs::{
    cluster_assign, dac_loss, generate_pair_labels, pair_loss_term, pairwise_similarity,
    update_thresholds, LabelFeatures, PairLabel, PairLabels, SimilarityMatrix, ThresholdState,
    ThresholdUpdate, LOG_CLAMP,
};
pub use train::{fit, train_epoch, EpochRecord, EpochStats, FitConfig, FitResult, TrainConfig};
