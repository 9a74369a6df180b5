//! Pluggable per-pixel density regressor: the reference network, its
//! two-head training loss, explicit ensembles and MC-dropout.

pub(crate) mod adam;
mod checkpoint;
mod mlp;
mod spec;
mod train;
mod uncertainty;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, PMDL_MAGIC, PMDL_VERSION};
pub use mlp::{pixel_loss, sigmoid, HeadOutput, Mlp, Scratch};
pub use spec::{ModelSpec, TrainConfig};
pub use train::{
    fit, member_seed, pixel_features, train, train_ensemble, train_ensemble_with_seeds, LabelledPatch, Normalizer,
    PixelDataset, PixelOutputs, TrainedModel, DEFAULT_ENSEMBLE_SIZE,
};
pub use uncertainty::{predict_uncertainty, EnsemblePrediction, UncertaintyMode};
