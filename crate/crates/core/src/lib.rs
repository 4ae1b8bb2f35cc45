//! Reinforcement-learning test case prioritization for continuous
//! integration, evaluated by replaying historical test logs.
//!
//! Each CI cycle is replayed in order: an agent assigns every test a
//! priority, the highest-priority prefix that fits the time budget is
//! "executed", the schedule is scored with NAPFD, and learning agents are
//! rewarded and refit. See [`experiment::run_experiment`].

pub mod agents;
pub mod approx;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod report;
pub mod rewards;

pub use agents::{AgentConfig, AgentKind, Prioritizer, PriorityAssignment, RlAgent};
pub use dataset::{Dataset, DatasetStats, LogFormat, SynthConfig};
pub use domain::{CiCycle, FeatureVector, Schedule, Status, TestCaseRecord, TestId};
pub use error::{Error, Result};
pub use evaluation::{napfd, NapfdSeries, TrendLine};
pub use experiment::{ExperimentConfig, ExperimentResult};
pub use rewards::{RewardAssignment, RewardFunction};
