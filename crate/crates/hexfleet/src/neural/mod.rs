//! Minimal dense-tensor reverse-mode autodiff and the fixed network
//! architecture built on it.

mod checks;
mod model;
mod tape;

pub use model::{
    action_embedding, actor_sample, critic_q, gcn_forward, leaf_actor, leaf_gcn, leaf_mlp,
    load_checkpoint,
    mat_to_tensor, mlp_forward, polyak, save_checkpoint, state_value_and_grad,
    stored_intention_log_prob, tau_schedule, value_v,
    ActorNodes, ActorSample, Adam, GcnNodes, Mlp, MlpNodes, NetSizes, ParameterSet, SampledVehicle,
    MODE_CHG, MODE_REB, MODE_SERVE,
};
pub use checks::{
    chi2_quantile_99, chi2_statistic, full_gradient_check, gumbel_argmax_counts,
    power_density_integral, softmax, squashed_log_density, GradientCheck,
};
pub use tape::{Tape, TapeError, TensorData, TensorRef};

#[cfg(test)]
mod tests;
