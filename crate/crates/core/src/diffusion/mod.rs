//! Modality-wise discrete diffusion with mask-and-replace corruption.

mod loss;
mod process;
mod schedule;

pub use loss::{
    position_loss, softmax, training_loss, LossOutput, PositionLoss, DEFAULT_AUX_WEIGHT,
};
pub use process::{
    corrupt, corrupt_state, fast_reverse_distribution, posterior, posterior_span,
    reverse_distribution,
};
pub use schedule::{
    modality_states, DiffusionSchedule, MaskReplace, ScheduleConfig, TransitionMatrix,
    DEFAULT_ALPHA_BAR_END, DEFAULT_GAMMA_BAR_END, DEFAULT_STEPS,
};
