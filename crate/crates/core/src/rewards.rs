//! Per-test feedback computed after a schedule has executed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{CiCycle, Schedule, TestId};
use crate::error::{Error, Result};

/// Reward for every test in a cycle's pool, scheduled or not.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardAssignment {
    pub per_test: BTreeMap<TestId, f64>,
}

impl RewardAssignment {
    pub fn get(&self, test: &TestId) -> Option<f64> {
        self.per_test.get(test).copied()
    }

    pub fn total(&self) -> f64 {
        self.per_test.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardFunction {
    /// Every scheduled test receives the number of detected failures.
    #[serde(rename = "failcount")]
    FailureCount,
    /// A scheduled test receives 1 if it failed.
    #[serde(rename = "tcfail")]
    TestCaseFailure,
    /// Detected-failure count, minus the failures a passing test was
    /// ranked ahead of.
    #[serde(rename = "timerank")]
    TimeRanked,
}

impl RewardFunction {
    pub const ALL: [RewardFunction; 3] = [
        RewardFunction::FailureCount,
        RewardFunction::TestCaseFailure,
        RewardFunction::TimeRanked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardFunction::FailureCount => "failcount",
            RewardFunction::TestCaseFailure => "tcfail",
            RewardFunction::TimeRanked => "timerank",
        }
    }

    pub fn evaluate(self, cycle: &CiCycle, schedule: &Schedule) -> Result<RewardAssignment> {
        match self {
            RewardFunction::FailureCount => reward_failure_count(cycle, schedule),
            RewardFunction::TestCaseFailure => reward_test_case_failure(cycle, schedule),
            RewardFunction::TimeRanked => reward_time_ranked(cycle, schedule),
        }
    }
}

impl fmt::Display for RewardFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardFunction::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown reward function '{s}' (expected failcount, tcfail or timerank)"
                ))
            })
    }
}

/// Failure flags of the scheduled tests, in rank order.
fn scheduled_failures(cycle: &CiCycle, schedule: &Schedule) -> Result<Vec<bool>> {
    schedule
        .ordered_tests()
        .iter()
        .map(|t| {
            cycle
                .record(t)
                .map(|r| r.status.is_failed())
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "scheduled test {t} has no record in cycle {}",
                        cycle.index()
                    ))
                })
        })
        .collect()
}

fn zeroed(cycle: &CiCycle) -> BTreeMap<TestId, f64> {
    cycle
        .records()
        .iter()
        .map(|r| (r.test.clone(), 0.0))
        .collect()
}

pub fn reward_failure_count(cycle: &CiCycle, schedule: &Schedule) -> Result<RewardAssignment> {
    let failed = scheduled_failures(cycle, schedule)?;
    let detected = failed.iter().filter(|&&f| f).count() as f64;
    let mut per_test = zeroed(cycle);
    for t in schedule.ordered_tests() {
        per_test.insert(t.clone(), detected);
    }
    Ok(RewardAssignment { per_test })
}

pub fn reward_test_case_failure(cycle: &CiCycle, schedule: &Schedule) -> Result<RewardAssignment> {
    let failed = scheduled_failures(cycle, schedule)?;
    let mut per_test = zeroed(cycle);
    for (t, &f) in schedule.ordered_tests().iter().zip(&failed) {
        per_test.insert(t.clone(), if f { 1.0 } else { 0.0 });
    }
    Ok(RewardAssignment { per_test })
}

pub fn reward_time_ranked(cycle: &CiCycle, schedule: &Schedule) -> Result<RewardAssignment> {
    let failed = scheduled_failures(cycle, schedule)?;
    let detected = failed.iter().filter(|&&f| f).count();
    let mut per_test = zeroed(cycle);
    // failures ranked strictly after the current position
    let mut failures_after = detected;
    for (t, &f) in schedule.ordered_tests().iter().zip(&failed) {
        if f {
            failures_after -= 1;
            per_test.insert(t.clone(), detected as f64);
        } else {
            per_test.insert(t.clone(), (detected - failures_after) as f64);
        }
    }
    Ok(RewardAssignment { per_test })
}
