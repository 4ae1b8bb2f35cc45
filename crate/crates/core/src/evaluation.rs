//! Budgeted schedule construction and the evaluation math: NAPFD per cycle,
//! least-squares trend lines and grouped differences between two runs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::agents::PriorityAssignment;
use crate::domain::{CiCycle, Schedule};
use crate::error::{Error, Result};

/// Fraction of the full suite's duration available per cycle by default.
pub const DEFAULT_BUDGET_RATIO: f64 = 0.5;

/// Relative slack on the budget comparison so that summation order cannot
/// drop the last test when the ratio is 1.
const BUDGET_SLACK: f64 = 1e-12;

pub fn check_budget_ratio(budget_ratio: f64) -> Result<()> {
    if budget_ratio > 0.0 && budget_ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "budget ratio must lie in (0, 1], got {budget_ratio}"
        )))
    }
}

/// Orders the pool by descending priority (ties by ascending test id) and
/// keeps the longest prefix whose total duration fits in
/// `budget_ratio x total pool duration`.
pub fn build_schedule(
    priorities: &PriorityAssignment,
    cycle: &CiCycle,
    budget_ratio: f64,
) -> Result<Schedule> {
    check_budget_ratio(budget_ratio)?;
    let mut ranked = Vec::with_capacity(cycle.len());
    for r in cycle.records() {
        let p = priorities.get(&r.test).ok_or_else(|| {
            Error::Integrity(format!(
                "no priority for test {} in cycle {}",
                r.test,
                cycle.index()
            ))
        })?;
        ranked.push((p, r));
    }
    ranked.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.test.cmp(&b.1.test),
        other => other,
    });

    let total = cycle.total_duration();
    let budget = budget_ratio * total + BUDGET_SLACK * total;
    let mut used = 0.0;
    let mut selected = Vec::new();
    for (_, r) in ranked {
        if used + r.duration > budget {
            break;
        }
        used += r.duration;
        selected.push(r.test.clone());
    }
    Schedule::new(selected, cycle.len())
}

/// Every value [`napfd`] can return.
pub const NAPFD_RANGE: std::ops::RangeInclusive<f64> = -1.0..=1.0;

/// Normalized average percentage of fault detection of `schedule`:
///
/// `p - sum(rank of detected failures) / (detected x |schedule|) + p / (2 |schedule|)`
/// with `p = detected / total_failures_in_pool`.
///
/// `total_failures_in_pool` counts every failing test of the cycle, scheduled
/// or not. A pool without failures scores 1; a schedule that detects none of
/// the pool's failures scores 0. The value never exceeds 1 and is
/// non-negative whenever all failures are detected; with partial detection
/// and late ranks it can drop below 0.
pub fn napfd(schedule: &Schedule, cycle: &CiCycle, total_failures_in_pool: usize) -> Result<f64> {
    let mut detected = 0usize;
    let mut rank_sum = 0usize;
    for (pos, test) in schedule.ordered_tests().iter().enumerate() {
        let record = cycle.record(test).ok_or_else(|| {
            Error::Integrity(format!(
                "scheduled test {test} has no record in cycle {}",
                cycle.index()
            ))
        })?;
        if record.status.is_failed() {
            detected += 1;
            rank_sum += pos + 1;
        }
    }
    if detected > total_failures_in_pool {
        return Err(Error::Integrity(format!(
            "schedule detects {detected} failures but the pool has only {total_failures_in_pool}"
        )));
    }
    if total_failures_in_pool == 0 {
        return Ok(1.0);
    }
    if detected == 0 {
        return Ok(0.0);
    }
    let n = schedule.len() as f64;
    let p = detected as f64 / total_failures_in_pool as f64;
    Ok(p - rank_sum as f64 / (detected as f64 * n) + p / (2.0 * n))
}

/// What happened in one replayed cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub cycle_index: usize,
    pub napfd: f64,
    pub scheduled: usize,
    pub detected: usize,
    pub total_failures: usize,
}

pub fn evaluate_cycle(schedule: &Schedule, cycle: &CiCycle) -> Result<CycleOutcome> {
    let total_failures = cycle.failure_count();
    let detected = crate::domain::failed_subset(cycle, schedule)?.len();
    Ok(CycleOutcome {
        cycle_index: cycle.index(),
        napfd: napfd(schedule, cycle, total_failures)?,
        scheduled: schedule.len(),
        detected,
        total_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NapfdSeries {
    per_cycle: Vec<(usize, f64)>,
}

impl NapfdSeries {
    pub fn new(per_cycle: Vec<(usize, f64)>) -> Result<Self> {
        for w in per_cycle.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Integrity(format!(
                    "cycle indices must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(c, v)) = per_cycle.iter().find(|(_, v)| !NAPFD_RANGE.contains(v)) {
            return Err(Error::Integrity(format!(
                "NAPFD {v} of cycle {c} outside [-1, 1]"
            )));
        }
        Ok(NapfdSeries { per_cycle })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.per_cycle
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_cycle.iter().map(|&(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.per_cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_cycle.is_empty()
    }

    /// Mean of the values whose cycle index lies in `range`.
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let selected: Vec<f64> = self
            .per_cycle
            .iter()
            .filter(|(c, _)| range.contains(c))
            .map(|&(_, v)| v)
            .collect();
        (!selected.is_empty()).then(|| selected.iter().sum::<f64>() / selected.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendLine {
    pub slope: f64,
    pub intercept: f64,
}

impl TrendLine {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares over `(cycle_index, napfd)`.
pub fn trend_fit(series: &NapfdSeries) -> Result<TrendLine> {
    let pts = series.points();
    if pts.len() < 2 {
        return Err(Error::Empty("trend fit needs at least two points"));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let mean_y = pts.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in pts {
        let dx = x as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok(TrendLine {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDifference {
    pub group_index: usize,
    pub size: usize,
    pub baseline_mean: f64,
    pub retecs_mean: f64,
    /// `baseline_mean - retecs_mean`; positive favours the baseline.
    pub difference: f64,
}

/// Splits two aligned series into consecutive groups of `group_size` cycles
/// and compares group means. A trailing partial group keeps its real size.
pub fn grouped_difference(
    baseline: &NapfdSeries,
    retecs: &NapfdSeries,
    group_size: usize,
) -> Result<Vec<GroupDifference>> {
    if group_size == 0 {
        return Err(Error::Config("group size must be positive".into()));
    }
    let (b, r) = (baseline.points(), retecs.points());
    if b.len() != r.len() || b.iter().zip(r).any(|(x, y)| x.0 != y.0) {
        return Err(Error::Config(format!(
            "series are not aligned ({} vs {} cycles)",
            b.len(),
            r.len()
        )));
    }
    let mean = |xs: &[(usize, f64)]| xs.iter().map(|&(_, v)| v).sum::<f64>() / xs.len() as f64;
    Ok(b.chunks(group_size)
        .zip(r.chunks(group_size))
        .enumerate()
        .map(|(group_index, (bg, rg))| {
            let (bm, rm) = (mean(bg), mean(rg));
            GroupDifference {
                group_index,
                size: bg.len(),
                baseline_mean: bm,
                retecs_mean: rm,
                difference: bm - rm,
            }
        })
        .collect())
}
