//! Seeded instance generation and experiment runners.

mod experiment;
mod instance;
mod timesim;

pub use experiment::{
    instance_seed, run_experiment, run_experiment_with, run_instance, Aggregate, Algorithm, ExperimentReport,
    ExperimentSpec, RunRow, WeightChoice,
};
pub use instance::{generate_instance, InstanceSpec, Range};
pub use timesim::{initial_split, run_time_dependent, BatteryState, PeriodRecord, Player, Role, TimeSimConfig};

use thiserror::Error;

use crate::game::GameError;
use crate::market::MarketError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid instance spec: {0}")]
    InvalidSpec(&'static str),
    #[error("invalid {0}: lower end must not exceed upper end")]
    InvalidRange(&'static str),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Game(#[from] GameError),
}
