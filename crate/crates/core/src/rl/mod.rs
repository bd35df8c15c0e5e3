//! Reinforcement-learning placement baselines: tabular Q-learning, Double
//! Q-learning and a DQN over a gridded action space.

pub mod dqn;
pub mod env;
pub mod tabular;

pub use dqn::{dqn_train, DqnConfig, DqnModel, DQN_MAGIC};
pub use env::{rl_policy_positions, Action, Environment, Policy, StayPolicy, Step, TabularMdp, UavEnv};
pub use tabular::{double_q_learning_train, q_learning_train, DoubleQ, QTable, RlConfig};

/// Index of the largest value. Ties go to the later action, so an agent
/// with no preference stays put in the UAV action order.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = i;
        }
    }
    best
}

/// Linear ε schedule from `start` to `end` over the first `fraction` of
/// `total` episodes, then constant.
pub fn epsilon(episode: usize, total: usize, start: f64, end: f64, fraction: f64) -> f64 {
    let horizon = (total as f64 * fraction).max(1.0);
    let t = (episode as f64 / horizon).min(1.0);
    start + (end - start) * t
}
