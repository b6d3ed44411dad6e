//! Deep Q-learning agent with experience replay and the semi-supervised
//! episode branch that rewards unlabeled samples against VAE pseudo-labels.

mod qfunc;
mod replay;
mod train;

pub use qfunc::{q_target, select_action, QFunction, QGrads, QOptimizer};
pub use replay::{EncodedState, ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
pub use train::{
    evaluate, infer_label, normalized_position, run_episode, train, EpisodeStats, Episode, EpochMetrics, EvalStats,
    Learner, MetricsWriter, Mode, SampleSet, TrainConfig, TrainOutcome, TrainedAgent, METRICS_HEADER,
};

#[cfg(test)]
mod tests;
