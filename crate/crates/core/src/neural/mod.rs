//! The CNN interpolator: convolution kernels, the network with its
//! hand-written backward pass, Adam, training data and the query path used
//! inside the particle loop.

pub mod adam;
pub mod augment;
pub mod conv;
pub mod dataset;
pub mod model;
pub mod query;
pub mod train;

pub use adam::{AdamState, TrainConfig};
pub use augment::{augment_patch, Patch, TrainingPatch};
pub use dataset::{build_dataset, default_corpus, default_dataset};
pub use model::{load_model, save_model, ChannelPlan, CnnModel};
pub use query::{neural_query, NeuralInterpolator};
pub use train::{train, train_from, write_loss_curve};

static DEFAULT_WEIGHTS: &[u8] = include_bytes!("../../assets/default_model.phkw");

/// The network shipped with the crate, trained with `phks train` defaults.
pub fn default_model() -> crate::Result<CnnModel> {
    model::decode_model(DEFAULT_WEIGHTS)
}
