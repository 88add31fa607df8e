//! A small CPU convolutional network: layers with hand-written backward
//! passes, softmax cross-entropy, Adam, training and checkpoints.

mod adam;
mod checkpoint;
pub mod layers;
mod loss;
mod model;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState, TrainConfig};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use loss::{cce_loss, one_hot};
pub use model::{
    build_reference_model, closed_form_parameter_count, count_parameters, gradient_check, predict,
    predict_batch, reference_specs, BatchGradients, GradientCheck, LayerSpec, Model,
};
pub use tensor::Tensor;
pub use train::{argmax, evaluate, train, write_history_csv, EpochRecord, Example, TrainOutcome};
