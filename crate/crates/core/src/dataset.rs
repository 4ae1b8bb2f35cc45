//! Reading and writing CI histories, summary statistics, and a seeded
//! generator of synthetic histories.
//!
//! Input logs use `verdict = 1` for a failed execution and `0` for a pass.
//! Parsing converts this once into [`Status`]; nothing downstream sees the
//! file convention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CiCycle, Status, TestCaseRecord, TestId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    /// `cycle,test_id,duration,verdict`, comma separated.
    Canonical,
    /// Semicolon separated ABB robotics export (`Id;Name;Duration;...;Verdict;Cycle;...`).
    Abb,
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::Canonical => "canonical",
            LogFormat::Abb => "abb",
        })
    }
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(LogFormat::Canonical),
            "abb" => Ok(LogFormat::Abb),
            other => Err(Error::Config(format!(
                "unknown log format '{other}' (expected canonical or abb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    cycles: Vec<CiCycle>,
    test_pool: BTreeSet<TestId>,
}

impl Dataset {
    /// Cycle indices must run `0, 1, 2, ...`.
    pub fn new(name: impl Into<String>, cycles: Vec<CiCycle>) -> Result<Self> {
        let mut test_pool = BTreeSet::new();
        for (expected, cycle) in cycles.iter().enumerate() {
            if cycle.index() != expected {
                return Err(Error::Integrity(format!(
                    "cycle indices must be contiguous from 0; found {} at position {expected}",
                    cycle.index()
                )));
            }
            test_pool.extend(cycle.records().iter().map(|r| r.test.clone()));
        }
        Ok(Dataset {
            name: name.into(),
            cycles,
            test_pool,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cycles(&self) -> &[CiCycle] {
        &self.cycles
    }

    pub fn test_pool(&self) -> &BTreeSet<TestId> {
        &self.test_pool
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub distinct_tests: usize,
    pub commit_count: usize,
    pub execution_count: usize,
    pub failed_fraction: f64,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str = "dataset,tests,commits,executions,failed_fraction";

    /// One data row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{},{:.6}",
            self.distinct_tests, self.commit_count, self.execution_count, self.failed_fraction
        )
    }
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let execution_count: usize = dataset.cycles.iter().map(CiCycle::len).sum();
    let failed: usize = dataset.cycles.iter().map(CiCycle::failure_count).sum();
    DatasetStats {
        distinct_tests: dataset.test_pool.len(),
        commit_count: dataset.cycles.len(),
        execution_count,
        failed_fraction: if execution_count == 0 {
            0.0
        } else {
            failed as f64 / execution_count as f64
        },
    }
}

type RawRecord = (TestId, f64, Status);

struct Columns {
    test: usize,
    duration: usize,
    verdict: usize,
    cycle: usize,
}

fn find_column(headers: &csv::StringRecord, candidates: &[&str]) -> Result<usize> {
    candidates
        .iter()
        .find_map(|c| headers.iter().position(|h| h.trim() == *c))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("header is missing column {}", candidates.join(" or ")),
        })
}

fn parse_field<T: FromStr>(
    record: &csv::StringRecord,
    col: usize,
    what: &str,
    line: u64,
) -> Result<T> {
    let raw = record.get(col).ok_or_else(|| Error::Parse {
        line,
        message: format!("row has no {what} field"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} '{raw}'"),
    })
}

/// Parses a CI log into a dataset. Cycles are renumbered `0..n` in the
/// ascending order of their identifiers in the file.
pub fn parse_ci_log<R: Read>(source: R, format: LogFormat, name: &str) -> Result<Dataset> {
    let delimiter = match format {
        LogFormat::Canonical => b',',
        LogFormat::Abb => b';',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = match format {
        LogFormat::Canonical => Columns {
            cycle: find_column(&headers, &["cycle"])?,
            test: find_column(&headers, &["test_id"])?,
            duration: find_column(&headers, &["duration"])?,
            verdict: find_column(&headers, &["verdict"])?,
        },
        // `Name` identifies the test case; `Id` is only a fallback because in
        // the ABB exports it numbers the execution rows.
        LogFormat::Abb => Columns {
            cycle: find_column(&headers, &["Cycle"])?,
            test: find_column(&headers, &["Name", "Id"])?,
            duration: find_column(&headers, &["Duration"])?,
            verdict: find_column(&headers, &["Verdict"])?,
        },
    };

    // original cycle id -> (records, seen tests)
    let mut grouped: BTreeMap<i64, (Vec<RawRecord>, BTreeSet<TestId>)> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let cycle: i64 = parse_field(&row, cols.cycle, "cycle", line)?;
        let raw_test = row.get(cols.test).unwrap_or("").trim();
        let test = TestId::new(raw_test).map_err(|_| Error::Parse {
            line,
            message: "empty test id".into(),
        })?;
        let duration: f64 = parse_field(&row, cols.duration, "duration", line)?;
        if !duration.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("invalid duration {duration}"),
            });
        }
        if duration < 0.0 {
            return Err(Error::Integrity(format!(
                "negative duration {duration} for test {test} in cycle {cycle} (line {line})"
            )));
        }
        let verdict: i64 = parse_field(&row, cols.verdict, "verdict", line)?;
        let status = match verdict {
            0 => Status::Passed,
            v if v > 0 => Status::Failed,
            v => {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid verdict {v}"),
                });
            }
        };
        let (records, seen) = grouped.entry(cycle).or_default();
        if !seen.insert(test.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate record for test {test} in cycle {cycle} (line {line})"
            )));
        }
        records.push((test, duration, status));
    }

    let cycles = grouped
        .into_values()
        .enumerate()
        .map(|(index, (records, _))| {
            let records = records
                .into_iter()
                .map(|(t, d, s)| TestCaseRecord::new(t, d, s, index))
                .collect::<Result<Vec<_>>>()?;
            CiCycle::new(index, records)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, cycles)
}

pub fn load_dataset(path: &Path, format: LogFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_ci_log(std::io::BufReader::new(file), format, &name)
}

/// Writes the canonical format. Durations use the shortest representation
/// that parses back to the same value.
pub fn write_canonical<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "cycle,test_id,duration,verdict")?;
    for cycle in &dataset.cycles {
        for r in cycle.records() {
            writeln!(
                out,
                "{},{},{},{}",
                cycle.index(),
                r.test,
                r.duration,
                1 - r.status.value()
            )?;
        }
    }
    Ok(())
}

/// Parameters of the synthetic history generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub test_count: usize,
    pub cycle_count: usize,
    /// Share of tests that fail in every cycle (before noise).
    pub always_fail_fraction: f64,
    /// Probability that any single verdict is inverted.
    pub noise_flip_probability: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            test_count: 100,
            cycle_count: 300,
            always_fail_fraction: 0.2,
            noise_flip_probability: 0.02,
            min_duration: 1.0,
            max_duration: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.always_fail_fraction) {
            return Err(Error::Config(format!(
                "always_fail_fraction must lie in [0, 1], got {}",
                self.always_fail_fraction
            )));
        }
        if !unit.contains(&self.noise_flip_probability) {
            return Err(Error::Config(format!(
                "noise_flip_probability must lie in [0, 1], got {}",
                self.noise_flip_probability
            )));
        }
        if !(self.min_duration >= 0.0 && self.min_duration <= self.max_duration)
            || !self.max_duration.is_finite()
        {
            return Err(Error::Config(format!(
                "duration bounds must satisfy 0 <= min <= max, got [{}, {}]",
                self.min_duration, self.max_duration
            )));
        }
        if self.test_count == 0 {
            return Err(Error::Config("test_count must be positive".into()));
        }
        Ok(())
    }

    /// Size of the always-failing subset: `ceil(fraction x tests)`.
    pub fn failing_count(&self) -> usize {
        let exact = self.always_fail_fraction * self.test_count as f64;
        ((exact - 1e-9).ceil().max(0.0) as usize).min(self.test_count)
    }
}

/// Test names used by the generator: `T0`, `T1`, ... zero padded to equal width.
pub fn synth_test_names(test_count: usize) -> Vec<String> {
    let width = test_count.saturating_sub(1).to_string().len();
    (0..test_count).map(|i| format!("T{i:0width$}")).collect()
}

/// Every test runs in every cycle. A seeded subset fails each cycle, every
/// verdict is then flipped independently with the noise probability, and
/// each test keeps one duration drawn uniformly from the bounds.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids = synth_test_names(config.test_count)
        .into_iter()
        .map(TestId::new)
        .collect::<Result<Vec<_>>>()?;
    let durations: Vec<f64> = (0..config.test_count)
        .map(|_| {
            if config.max_duration > config.min_duration {
                rng.random_range(config.min_duration..=config.max_duration)
            } else {
                config.min_duration
            }
        })
        .collect();
    let mut failing = vec![false; config.test_count];
    for i in index::sample(&mut rng, config.test_count, config.failing_count()) {
        failing[i] = true;
    }
    let p = config.noise_flip_probability;
    let cycles = (0..config.cycle_count)
        .map(|c| {
            let records = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let flip = p > 0.0 && rng.random_bool(p);
                    let status = if failing[i] != flip {
                        Status::Failed
                    } else {
                        Status::Passed
                    };
                    TestCaseRecord::new(id.clone(), durations[i], status, c)
                })
                .collect::<Result<Vec<_>>>()?;
            CiCycle::new(c, records)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(format!("synthetic-{}", config.seed), cycles)
}
