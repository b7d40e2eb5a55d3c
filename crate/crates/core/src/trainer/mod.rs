//! Joint training of the permutation logits and the backbone, evaluation,
//! the γ sweep and the overhead timing.
//!
//! Each epoch walks the training split in mini-batches (or one full batch),
//! takes one optimizer step per batch on `L = L_T + λ·L_P`, and then
//! multiplies the temperature by 0.9 (floored at `tau_min`). Per-window
//! gradients are computed independently and summed in window order, so
//! results do not depend on the execution mode.

mod config;
mod sweep;
mod timing;
mod train;

pub use config::TrainConfig;
pub use sweep::{sweep_gamma, SweepRow, SweepTable, PAPER_GAMMAS};
pub use timing::{timing_report, TimingReport};
pub use train::{
    batch_gradients, build_model, evaluate, train, EpochMetrics, Evaluation, MetricLog, TrainOutcome,
    Trainer,
};
