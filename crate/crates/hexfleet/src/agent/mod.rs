//! Replay buffer, the robust actor-critic training loop with ablation
//! switches, the greedy dispatch baseline, and evaluation.

mod eval;
mod policies;
mod replay;
mod train;

pub use eval::{evaluate, EvalMetrics, EvalOutput, EvalPolicy};
pub use policies::{execute_intention_clipped, greedy_policy};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    pdrsac_train, train_log_row, AblationFlags, LogRow, TrainArtifacts, TrainConfig,
    TRAIN_LOG_HEADER,
};
