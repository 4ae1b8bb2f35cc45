//! Core vocabulary: tests, cycles, schedules, execution history and the
//! per-test state encoding consumed by the value-function approximators.
//!
//! Status follows the convention `1 = passed, 0 = failed`. Everything that
//! faces the learning agent (failure history, rewards) is failure-oriented
//! instead, so the history window stores `1 - status`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier of a test case. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TestId(Arc<str>);

impl TestId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() {
            return Err(Error::Integrity("test id must not be empty".into()));
        }
        Ok(TestId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TestId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        TestId::new(value)
    }
}

impl From<TestId> for String {
    fn from(id: TestId) -> String {
        id.0.to_string()
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

/// Outcome of one test execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Passed,
    Failed,
}

impl Status {
    /// `1` for passed, `0` for failed.
    pub fn value(self) -> u8 {
        match self {
            Status::Passed => 1,
            Status::Failed => 0,
        }
    }

    /// `1 - status`: the indicator used in agent-facing history.
    pub fn failure_indicator(self) -> f64 {
        match self {
            Status::Passed => 0.0,
            Status::Failed => 1.0,
        }
    }

    pub fn is_failed(self) -> bool {
        self == Status::Failed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestCaseRecord {
    pub test: TestId,
    /// Seconds; known before the test runs.
    pub duration: f64,
    pub status: Status,
    pub cycle_index: usize,
}

impl TestCaseRecord {
    pub fn new(test: TestId, duration: f64, status: Status, cycle_index: usize) -> Result<Self> {
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::Integrity(format!(
                "test {test} in cycle {cycle_index} has invalid duration {duration}"
            )));
        }
        Ok(TestCaseRecord {
            test,
            duration,
            status,
            cycle_index,
        })
    }
}

/// All records of one commit. The unit of replay.
#[derive(Debug, Clone)]
pub struct CiCycle {
    index: usize,
    records: Vec<TestCaseRecord>,
    lookup: HashMap<TestId, usize>,
}

impl CiCycle {
    pub fn new(index: usize, records: Vec<TestCaseRecord>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(records.len());
        for (pos, record) in records.iter().enumerate() {
            if record.cycle_index != index {
                return Err(Error::Integrity(format!(
                    "record for test {} carries cycle {} inside cycle {index}",
                    record.test, record.cycle_index
                )));
            }
            if lookup.insert(record.test.clone(), pos).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate test {} in cycle {index}",
                    record.test
                )));
            }
        }
        Ok(CiCycle {
            index,
            records,
            lookup,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn records(&self) -> &[TestCaseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, test: &TestId) -> Option<&TestCaseRecord> {
        self.lookup.get(test).map(|&pos| &self.records[pos])
    }

    pub fn total_duration(&self) -> f64 {
        self.records.iter().map(|r| r.duration).sum()
    }

    pub fn max_duration(&self) -> f64 {
        self.records.iter().map(|r| r.duration).fold(0.0, f64::max)
    }

    pub fn failure_count(&self) -> usize {
        self.records.iter().filter(|r| r.status.is_failed()).count()
    }

    /// A schedule containing the whole pool in record order.
    pub fn full_schedule(&self) -> Schedule {
        Schedule::new(
            self.records.iter().map(|r| r.test.clone()).collect(),
            self.len(),
        )
        .expect("cycle records are unique")
    }
}

impl PartialEq for CiCycle {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index && self.records == other.records
    }
}

/// Ordered, possibly truncated subset of a cycle's pool. Ranks are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    ordered_tests: Vec<TestId>,
    total_pool_size: usize,
    positions: HashMap<TestId, usize>,
}

impl Schedule {
    pub fn new(ordered_tests: Vec<TestId>, total_pool_size: usize) -> Result<Self> {
        if ordered_tests.len() > total_pool_size {
            return Err(Error::Integrity(format!(
                "schedule of {} tests exceeds pool of {total_pool_size}",
                ordered_tests.len()
            )));
        }
        let mut positions = HashMap::with_capacity(ordered_tests.len());
        for (pos, test) in ordered_tests.iter().enumerate() {
            if positions.insert(test.clone(), pos + 1).is_some() {
                return Err(Error::Integrity(format!("test {test} scheduled twice")));
            }
        }
        Ok(Schedule {
            ordered_tests,
            total_pool_size,
            positions,
        })
    }

    pub fn ordered_tests(&self) -> &[TestId] {
        &self.ordered_tests
    }

    pub fn total_pool_size(&self) -> usize {
        self.total_pool_size
    }

    pub fn len(&self) -> usize {
        self.ordered_tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_tests.is_empty()
    }

    pub fn contains(&self, test: &TestId) -> bool {
        self.positions.contains_key(test)
    }

    /// 1-based position of `test`, or `None` when it was not selected.
    pub fn rank_of(&self, test: &TestId) -> Option<usize> {
        self.positions.get(test).copied()
    }
}

/// The scheduled tests that failed in `cycle`.
pub fn failed_subset(cycle: &CiCycle, schedule: &Schedule) -> Result<BTreeSet<TestId>> {
    let mut failed = BTreeSet::new();
    for test in schedule.ordered_tests() {
        let record = cycle.record(test).ok_or_else(|| {
            Error::Integrity(format!(
                "scheduled test {test} has no record in cycle {}",
                cycle.index()
            ))
        })?;
        if record.status.is_failed() {
            failed.insert(test.clone());
        }
    }
    Ok(failed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub cycle_index: usize,
    pub status: Status,
    pub duration: f64,
}

/// Executions of a single test, newest first.
#[derive(Debug, Clone, Default)]
pub struct ExecutionLog {
    entries: VecDeque<Execution>,
}

impl ExecutionLog {
    pub fn from_newest_first(entries: impl IntoIterator<Item = Execution>) -> Self {
        ExecutionLog {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn push(&mut self, execution: Execution) {
        self.entries.push_front(execution);
    }

    pub fn latest(&self) -> Option<&Execution> {
        self.entries.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Execution> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Execution logs for every test seen so far in a replay.
#[derive(Debug, Clone, Default)]
pub struct History {
    logs: HashMap<TestId, ExecutionLog>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self, test: &TestId) -> Option<&ExecutionLog> {
        self.logs.get(test)
    }

    /// Appends every record of `cycle` to the corresponding logs.
    pub fn record_cycle(&mut self, cycle: &CiCycle) {
        for r in cycle.records() {
            self.logs
                .entry(r.test.clone())
                .or_default()
                .push(Execution {
                    cycle_index: cycle.index(),
                    status: r.status,
                    duration: r.duration,
                });
        }
    }
}

/// Encoded agent state for one test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub normalized_duration: f64,
    pub recency: f64,
    /// `1 - status` of the last H executions, newest first, zero padded.
    pub failure_history: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        2 + self.failure_history.len()
    }

    /// Flattened model input: `[duration, recency, history...]`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.normalized_duration);
        v.push(self.recency);
        v.extend_from_slice(&self.failure_history);
        v
    }

    pub fn from_input(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Config(format!(
                "feature input needs at least 3 components, got {}",
                values.len()
            )));
        }
        Ok(FeatureVector {
            normalized_duration: values[0],
            recency: values[1],
            failure_history: values[2..].to_vec(),
        })
    }
}

/// `1 / (1 + cycles since the last run)`. A never-run test counts the
/// distance from cycle zero.
pub fn recency(current_cycle_index: usize, history: &ExecutionLog) -> f64 {
    let delta = match history.latest() {
        Some(last) => current_cycle_index.saturating_sub(last.cycle_index),
        None => current_cycle_index,
    };
    1.0 / (1.0 + delta as f64)
}

/// Duration scaled by the largest duration in the pool, clamped to `[0, 1]`.
pub fn normalized_duration(duration: f64, max_duration: f64) -> f64 {
    if max_duration > 0.0 {
        (duration / max_duration).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Builds the state for a test about to run in `current_cycle_index`.
///
/// `duration` is the pending execution's duration, `history` holds the
/// test's earlier executions and `history_length` is the window H.
pub fn state_vector(
    duration: f64,
    current_cycle_index: usize,
    history: &ExecutionLog,
    history_length: usize,
    max_duration: f64,
) -> FeatureVector {
    let mut failure_history: Vec<f64> = history
        .iter()
        .take(history_length)
        .map(|e| e.status.failure_indicator())
        .collect();
    failure_history.resize(history_length, 0.0);
    FeatureVector {
        normalized_duration: normalized_duration(duration, max_duration),
        recency: recency(current_cycle_index, history),
        failure_history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> TestId {
        TestId::new(s).unwrap()
    }

    fn cycle(index: usize, entries: &[(&str, f64, Status)]) -> CiCycle {
        let records = entries
            .iter()
            .map(|&(t, d, s)| TestCaseRecord::new(id(t), d, s, index).unwrap())
            .collect();
        CiCycle::new(index, records).unwrap()
    }

    fn schedule(tests: &[&str], pool: usize) -> Schedule {
        Schedule::new(tests.iter().map(|t| id(t)).collect(), pool).unwrap()
    }

    #[test]
    fn rank_of_examples() {
        let s = schedule(&["A", "B", "C"], 3);
        assert_eq!(s.rank_of(&id("B")), Some(2));
        assert_eq!(s.rank_of(&id("D")), None);
        assert_eq!(schedule(&["C", "A"], 3).rank_of(&id("C")), Some(1));
    }

    #[test]
    fn empty_test_id_rejected() {
        assert!(TestId::new("").is_err());
    }

    #[test]
    fn schedule_rejects_duplicates_and_oversize() {
        assert!(Schedule::new(vec![id("A"), id("A")], 2).is_err());
        assert!(Schedule::new(vec![id("A"), id("B")], 1).is_err());
    }

    #[test]
    fn cycle_rejects_duplicate_tests() {
        let records = vec![
            TestCaseRecord::new(id("A"), 1.0, Status::Passed, 0).unwrap(),
            TestCaseRecord::new(id("A"), 2.0, Status::Failed, 0).unwrap(),
        ];
        assert!(matches!(CiCycle::new(0, records), Err(Error::Integrity(_))));
    }

    #[test]
    fn negative_duration_rejected() {
        assert!(TestCaseRecord::new(id("A"), -1.0, Status::Passed, 0).is_err());
        assert!(TestCaseRecord::new(id("A"), f64::NAN, Status::Passed, 0).is_err());
    }

    #[test]
    fn failed_subset_examples() {
        let c = cycle(
            0,
            &[
                ("A", 1.0, Status::Failed),
                ("B", 1.0, Status::Passed),
                ("C", 1.0, Status::Failed),
            ],
        );
        let got = failed_subset(&c, &schedule(&["A", "B", "C"], 3)).unwrap();
        assert_eq!(got, [id("A"), id("C")].into_iter().collect());

        let all_pass = cycle(0, &[("A", 1.0, Status::Passed), ("B", 1.0, Status::Passed)]);
        assert!(failed_subset(&all_pass, &all_pass.full_schedule())
            .unwrap()
            .is_empty());

        let both_fail = cycle(0, &[("A", 1.0, Status::Failed), ("B", 1.0, Status::Failed)]);
        let got = failed_subset(&both_fail, &schedule(&["B"], 2)).unwrap();
        assert_eq!(got, [id("B")].into_iter().collect());
    }

    #[test]
    fn failed_subset_unknown_test_is_integrity_error() {
        let c = cycle(0, &[("A", 1.0, Status::Failed)]);
        let err = failed_subset(&c, &schedule(&["Z"], 1)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn state_vector_worked_example() {
        // newest first: pass, fail, fail; last run one cycle ago
        let log = ExecutionLog::from_newest_first([
            Execution {
                cycle_index: 9,
                status: Status::Passed,
                duration: 2.0,
            },
            Execution {
                cycle_index: 8,
                status: Status::Failed,
                duration: 2.0,
            },
            Execution {
                cycle_index: 7,
                status: Status::Failed,
                duration: 2.0,
            },
        ]);
        let fv = state_vector(2.0, 10, &log, 4, 4.0);
        assert_eq!(fv.to_input(), vec![0.5, 0.5, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn state_vector_never_run() {
        let fv = state_vector(0.0, 0, &ExecutionLog::default(), 2, 1.0);
        assert_eq!(fv.to_input(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn state_vector_single_slot() {
        let log = ExecutionLog::from_newest_first([
            Execution {
                cycle_index: 3,
                status: Status::Failed,
                duration: 1.0,
            },
            Execution {
                cycle_index: 2,
                status: Status::Passed,
                duration: 1.0,
            },
        ]);
        let fv = state_vector(1.0, 4, &log, 1, 1.0);
        assert_eq!(fv.failure_history, vec![1.0]);
    }

    #[test]
    fn history_tracks_newest_first() {
        let mut h = History::new();
        h.record_cycle(&cycle(0, &[("A", 1.0, Status::Failed)]));
        h.record_cycle(&cycle(1, &[("A", 1.0, Status::Passed)]));
        let log = h.log(&id("A")).unwrap();
        assert_eq!(log.latest().unwrap().cycle_index, 1);
        assert_eq!(log.len(), 2);
        assert!(h.log(&id("B")).is_none());
    }
}
