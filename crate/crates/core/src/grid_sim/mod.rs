//! Synthetic fault-episode generation for the double-line benchmark grid.
//!
//! An analytic short-circuit model stands in for an EMT solver: 50 Hz
//! steady-state sinusoids, symmetrical-component fault currents with decaying
//! DC offset, and bus-voltage sags set by a source/line voltage divider so
//! that the apparent impedance at a relay grows with distance to the fault.

mod config;
pub mod container;
mod episode;
mod fault;
mod layout;
pub mod physics;

pub use config::{Bounds, GridConfig};
pub use episode::{
    generate_dataset, generate_dataset_sequential, generate_range, plan_episode,
    synthesize_episode, synthesize_planned, Episode, EpisodePlan, Randomization,
    CROP_HALF_WIDTH_S, LOC_MAX, LOC_MIN,
};
pub use fault::{FaultShape, FaultType, CLASS_COUNT};
pub use layout::{
    build_channel_layout, ChannelLayout, Phase, Quantity, RelayPlacement, Topology,
    CHANNELS_PER_RELAY, CHANNEL_COUNT, LINE_COUNT, RELAY_COUNT, SUBSTATION_COUNT,
};
