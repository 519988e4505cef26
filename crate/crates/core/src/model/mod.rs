mod adam;
pub mod checkpoint;
mod mlp;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint};
pub use mlp::{
    argmax, batch_loss, clamp_location, forward, init_mlp, loss_and_grad, softmax_rows,
    ForwardCache, Gradients, Layer, ModelParams, Targets, Task,
};
pub use train::{
    evaluate_loss, predict, run_epochs, train, EarlyStopping, EpochRecord, EpochRunner, History,
    Predictions, SampleSet, StopDecision, TrainConfig,
};
