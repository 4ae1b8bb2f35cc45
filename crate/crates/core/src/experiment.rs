//! Replay of a CI history through an agent, repeated over seeded
//! iterations and averaged per cycle.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{build_agent, AgentConfig, AgentKind};
use crate::dataset::{load_dataset, Dataset, LogFormat};
use crate::domain::{History, Schedule};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_schedule, check_budget_ratio, evaluate_cycle, grouped_difference, trend_fit,
    CycleOutcome, GroupDifference, NapfdSeries, TrendLine, DEFAULT_BUDGET_RATIO,
};

/// Cycles per bar in grouped comparisons.
pub const DEFAULT_GROUP_SIZE: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub format: LogFormat,
    pub agent: AgentKind,
    #[serde(flatten)]
    pub agent_config: AgentConfig,
    pub budget_ratio: f64,
    pub iterations: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            format: LogFormat::Canonical,
            agent: AgentKind::Network,
            agent_config: AgentConfig::default(),
            budget_ratio: DEFAULT_BUDGET_RATIO,
            iterations: 30,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        check_budget_ratio(self.budget_ratio)?;
        self.agent_config.validate()
    }

    /// Seed of iteration `k`: the base seed plus `k`.
    pub fn iteration_seed(&self, k: usize) -> u64 {
        self.agent_config.seed.wrapping_add(k as u64)
    }

    /// Reward label for reports; baselines do not consume rewards.
    pub fn reward_label(&self) -> &'static str {
        if self.agent.is_learning() {
            self.agent_config.reward.name()
        } else {
            "none"
        }
    }

    pub fn label(&self) -> String {
        if self.agent.is_learning() {
            format!("{}-{}", self.agent, self.agent_config.reward)
        } else {
            self.agent.to_string()
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("no dataset path given".into()))?;
        load_dataset(path, self.format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub iteration: usize,
    pub seed: u64,
    pub outcomes: Vec<CycleOutcome>,
}

impl IterationResult {
    pub fn series(&self) -> Result<NapfdSeries> {
        NapfdSeries::new(
            self.outcomes
                .iter()
                .map(|o| (o.cycle_index, o.napfd))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub iterations: Vec<IterationResult>,
    /// Per-cycle mean NAPFD across iterations.
    pub mean: NapfdSeries,
    /// `None` when the dataset has fewer than two cycles.
    pub trend: Option<TrendLine>,
}

/// Replays `dataset` once with the agent seeded by `seed`.
pub fn run_iteration(
    config: &ExperimentConfig,
    dataset: &Dataset,
    iteration: usize,
) -> Result<IterationResult> {
    let seed = config.iteration_seed(iteration);
    let agent_config = AgentConfig {
        seed,
        ..config.agent_config.clone()
    };
    let mut agent = build_agent(config.agent, &agent_config)?;
    let reward = agent_config.reward;
    let mut history = History::new();
    let mut outcomes = Vec::with_capacity(dataset.cycles().len());
    for cycle in dataset.cycles() {
        if cycle.is_empty() {
            let empty = Schedule::new(Vec::new(), 0)?;
            outcomes.push(evaluate_cycle(&empty, cycle)?);
            continue;
        }
        let priorities = agent.prioritize(cycle, &history)?;
        let schedule = build_schedule(&priorities, cycle, config.budget_ratio)?;
        outcomes.push(evaluate_cycle(&schedule, cycle)?);
        if config.agent.is_learning() {
            let rewards = reward.evaluate(cycle, &schedule)?;
            agent.observe(cycle, &schedule, &rewards)?;
        }
        history.record_cycle(cycle);
    }
    Ok(IterationResult {
        iteration,
        seed,
        outcomes,
    })
}

/// Per-cycle arithmetic mean, summed in iteration order.
pub fn mean_series(iterations: &[IterationResult]) -> Result<NapfdSeries> {
    let first = iterations
        .first()
        .ok_or(Error::Empty("iteration results"))?;
    let n = iterations.len() as f64;
    let mut points = Vec::with_capacity(first.outcomes.len());
    for (pos, o) in first.outcomes.iter().enumerate() {
        let mut total = 0.0;
        for it in iterations {
            let other = it
                .outcomes
                .get(pos)
                .filter(|x| x.cycle_index == o.cycle_index);
            total += other
                .ok_or_else(|| Error::Integrity("iterations cover different cycles".into()))?
                .napfd;
        }
        points.push((o.cycle_index, (total / n).clamp(-1.0, 1.0)));
    }
    NapfdSeries::new(points)
}

pub fn run_experiment_on(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentResult> {
    config.validate()?;
    let iterations = (0..config.iterations)
        .into_par_iter()
        .map(|k| run_iteration(config, dataset, k))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_series(&iterations)?;
    let trend = if mean.len() >= 2 {
        Some(trend_fit(&mean)?)
    } else {
        None
    };
    Ok(ExperimentResult {
        config: config.clone(),
        iterations,
        mean,
        trend,
    })
}

/// Validates the configuration, loads its dataset and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    run_experiment_on(config, &dataset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineComparison {
    pub baseline: ExperimentResult,
    pub groups: Vec<GroupDifference>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub primary: ExperimentResult,
    pub baselines: Vec<BaselineComparison>,
}

fn check_comparable(primary: &ExperimentConfig, other: &ExperimentConfig) -> Result<()> {
    if primary.dataset != other.dataset || primary.format != other.format {
        return Err(Error::Config(format!(
            "compared runs use different datasets ({:?} vs {:?})",
            primary.dataset, other.dataset
        )));
    }
    if primary.budget_ratio != other.budget_ratio {
        return Err(Error::Config(format!(
            "compared runs use different budgets ({} vs {})",
            primary.budget_ratio, other.budget_ratio
        )));
    }
    Ok(())
}

/// Runs `primary` and every baseline on the same dataset and reports
/// `mean(baseline) - mean(primary)` per group of cycles.
pub fn compare_on(
    primary: &ExperimentConfig,
    baselines: &[ExperimentConfig],
    dataset: &Dataset,
    group_size: usize,
) -> Result<ComparisonResult> {
    primary.validate()?;
    for b in baselines {
        b.validate()?;
        check_comparable(primary, b)?;
    }
    let primary_result = run_experiment_on(primary, dataset)?;
    let baselines = baselines
        .iter()
        .map(|b| {
            let baseline = run_experiment_on(b, dataset)?;
            let groups = grouped_difference(&baseline.mean, &primary_result.mean, group_size)?;
            Ok(BaselineComparison { baseline, groups })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonResult {
        primary: primary_result,
        baselines,
    })
}

pub fn compare(
    primary: &ExperimentConfig,
    baselines: &[ExperimentConfig],
    group_size: usize,
) -> Result<ComparisonResult> {
    for b in baselines {
        check_comparable(primary, b)?;
    }
    primary.validate()?;
    let dataset = primary.load_dataset()?;
    compare_on(primary, baselines, &dataset, group_size)
}
