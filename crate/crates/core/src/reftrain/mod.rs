//! Synthetic multi-institution data and a tiny per-voxel reference trainer.

mod linear;
mod synth;

use crate::fedcore::ModelParams;
use crate::volumes::{IntensityVolume, LabelVolume};

pub use linear::{
    cross_entropy, cross_entropy_gradient, features_for, CaseFeatures, Features, ReferenceTrainer,
    TrainerParams, VoxelDataset, CLASS_LABELS, N_CLASSES, N_FEATURES, N_PARAMS,
};
pub use synth::{
    generate_cases, generate_institution, split_index, DataSpec, InstitutionSpec,
    SyntheticCase, SyntheticInstitution, Split, ET_MEAN, INTENSITY_MEANS,
};

/// What the federation needs from a local training procedure.
///
/// Every method must be deterministic in its arguments and keep the
/// parameter dimension fixed.
pub trait Trainer: Send + Sync {
    type Dataset: Send + Sync;

    fn init_params(&self, seed: u64) -> ModelParams;

    fn train(
        &self,
        params: &ModelParams,
        data: &Self::Dataset,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> ModelParams;

    /// Score in [0, 1].
    fn validate(&self, params: &ModelParams, data: &Self::Dataset) -> f64;

    fn predict(&self, params: &ModelParams, image: &IntensityVolume) -> LabelVolume;
}

/// The built-in trainer with default settings.
pub fn reference_trainer() -> ReferenceTrainer {
    ReferenceTrainer::default()
}
