//! The localization MDP: grid geometry, synthetic RSSI, actions, reward,
//! episode lifecycle, and dataset I/O.

mod dataset;
mod world;

pub use dataset::{load_beacons, load_dataset, parse_beacons, parse_dataset, save_dataset, write_dataset};
pub use world::{
    check_reading, default_beacons, reward_for_distance, Action, AgentState, Cell, FingerprintSample, GridWorld,
    StepResult, ACTION_COUNT, BUNDLE_SIZE, DEFAULT_CELL_SIZE,
};
