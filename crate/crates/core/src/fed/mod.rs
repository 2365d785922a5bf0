//! In-process federated simulation with an explicit client/server message
//! boundary.

mod checkpoint;
mod instances;
mod optimizer;
mod runtime;
mod wire;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use instances::{ClientData, DomainInstance};
pub use optimizer::{Optimizer, OptimizerConfig};
pub use runtime::{
    aggregate_and_update, client_step, local_gradient, mean_gradient, run_training, sample_clients, write_loss_terms,
    write_round_reports, ClientOutcome, ClientState, FedConfig, GlobalModel, RoundReport, TrainContext, TrainingOutcome,
};
pub use wire::{payload_values, ClientMessage};
