//! Desk-scale environments and reward-free offline datasets.

mod dataset;
mod gridworld;
mod persist;
mod pointmass;

pub use dataset::{
    generate_gridworld_dataset, generate_pointmass_dataset, gridworld_env_id, sample_segments,
    sample_transitions, ActionKind, Dataset, DatasetMeta, GenPolicy, Segment, Transition,
    TransitionBatch,
};
pub use gridworld::{GridAction, GridObs, GridWorld, FOUR_ROOM_MAP};
pub use persist::{load_dataset, save_dataset};
pub use pointmass::{PointMass, PointState};
