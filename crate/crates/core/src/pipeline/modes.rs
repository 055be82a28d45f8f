use super::config::ModeSchedule;
use crate::ppo::TrainingMode;

/// Mode of every environment at iteration `t`.
///
/// Alternating: env `i` is ID iff `i + t` is even, so each env swaps mode
/// every iteration. Separate: env `i` is ID iff `i` is even, at every `t`.
pub fn assign_modes(schedule: ModeSchedule, t: usize, num_envs: usize) -> Vec<TrainingMode> {
    (0..num_envs)
        .map(|i| {
            let id = match schedule {
                ModeSchedule::Alternating => (i + t).is_multiple_of(2),
                ModeSchedule::Separate => i % 2 == 0,
                ModeSchedule::AllId => true,
                ModeSchedule::AllOod => false,
            };
            if id {
                TrainingMode::Id
            } else {
                TrainingMode::Ood
            }
        })
        .collect()
}
