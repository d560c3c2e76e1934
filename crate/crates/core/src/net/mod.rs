//! The network `ŷ = A·B·relu(C·x)`, its regularized weighted square loss,
//! gradients and the gradient-descent trainer.

mod model;
mod objective;
mod train;

pub use model::{argmax, random_relu_layer, ArchConfig, GshModel};
pub use objective::{
    grad_check, gradients, loss, weight_vector, weighted_loss_of_predictions, Batch, Gradients,
    LossBreakdown, MomentObjective, TrainConfig,
};
pub use train::{sample_batch, train, train_from, write_trace_csv, TraceRow, TrainResult};
