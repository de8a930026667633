//! Training machinery: classifier, loss, optimizer, schedule, gradient
//! checks and checkpoints.

mod adam;
pub mod checkpoint;
mod classifier;
pub mod gradcheck;
mod loss;
mod scheduler;
mod tensor;
mod trainer;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use classifier::{Activation, Classifier, ClassifierCache, ClassifierConfig};
pub use gradcheck::{check_classifier, check_frontend, grad_check, max_rel_error, rel_error, GradCheckGroup};
pub use loss::{bce_loss, sigmoid};
pub use scheduler::PlateauScheduler;
pub use tensor::ParamTensor;
pub use trainer::{evaluate, feature_cache, fit, train_epoch, EpochLog, Evaluation, Model, TrainConfig, TrainOutcome};
