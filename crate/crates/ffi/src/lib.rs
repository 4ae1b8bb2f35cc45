//! C interface to the `retecs` library.
//!
//! Every fallible function returns a [`RetecsStatus`]; on anything other than
//! `RETECS_STATUS_OK` a description is available from
//! [`retecs_last_error_message`] on the same thread. Objects are handed out as
//! opaque pointers and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use retecs::dataset::{load_dataset, synth_generate};
use retecs::experiment::run_experiment_on;
use retecs::{
    AgentConfig, AgentKind, CiCycle, Dataset, Error, ExperimentConfig, ExperimentResult, LogFormat,
    RewardFunction, Schedule, Status, SynthConfig, TestCaseRecord, TestId,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetecsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Integrity = 5,
    Parse = 6,
    Divergence = 7,
    Empty = 8,
    Checkpoint = 9,
    Io = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetecsLogFormat {
    Canonical = 0,
    Abb = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetecsAgent {
    Network = 0,
    Tree = 1,
    Random = 2,
    Sorting = 3,
    Weighting = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetecsReward {
    FailureCount = 0,
    TestCaseFailure = 1,
    TimeRanked = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetecsSynthConfig {
    pub test_count: usize,
    pub cycle_count: usize,
    pub always_fail_fraction: f64,
    pub noise_flip_probability: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetecsDatasetStats {
    pub distinct_tests: usize,
    pub commit_count: usize,
    pub execution_count: usize,
    pub failed_fraction: f64,
}

/// Experiment settings. `hidden_layers` may be null, in which case the
/// library default network shape is used.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RetecsRunConfig {
    pub agent: RetecsAgent,
    pub reward: RetecsReward,
    pub history_length: usize,
    pub hidden_layers: *const usize,
    pub hidden_layer_count: usize,
    pub noise_std: f64,
    pub noise_decay: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub budget_ratio: f64,
    pub iterations: usize,
}

/// A parsed or generated CI history.
pub struct RetecsDataset(Dataset);

/// The outcome of replaying a dataset.
pub struct RetecsExperiment(ExperimentResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RetecsStatus {
    match e {
        Error::Config(_) => RetecsStatus::Config,
        Error::Integrity(_) => RetecsStatus::Integrity,
        Error::Parse { .. } => RetecsStatus::Parse,
        Error::Divergence { .. } => RetecsStatus::Divergence,
        Error::Empty(_) => RetecsStatus::Empty,
        Error::Checkpoint(_) => RetecsStatus::Checkpoint,
        Error::Io { .. } => RetecsStatus::Io,
    }
}

struct Failure(RetecsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RetecsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RetecsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RetecsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RetecsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            RetecsStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn retecs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn retecs_synth_config_default() -> RetecsSynthConfig {
    let d = SynthConfig::default();
    RetecsSynthConfig {
        test_count: d.test_count,
        cycle_count: d.cycle_count,
        always_fail_fraction: d.always_fail_fraction,
        noise_flip_probability: d.noise_flip_probability,
        min_duration: d.min_duration,
        max_duration: d.max_duration,
        seed: d.seed,
    }
}

#[no_mangle]
pub extern "C" fn retecs_run_config_default() -> RetecsRunConfig {
    let e = ExperimentConfig::default();
    let a = &e.agent_config;
    RetecsRunConfig {
        agent: RetecsAgent::Network,
        reward: RetecsReward::TestCaseFailure,
        history_length: a.history_length,
        hidden_layers: ptr::null(),
        hidden_layer_count: 0,
        noise_std: a.noise_std,
        noise_decay: a.noise_decay,
        learning_rate: a.train.learning_rate,
        seed: a.seed,
        budget_ratio: e.budget_ratio,
        iterations: e.iterations,
    }
}

/// Loads a CI log from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn retecs_dataset_load(
    path: *const c_char,
    format: RetecsLogFormat,
    out: *mut *mut RetecsDataset,
) -> RetecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let format = match format {
            RetecsLogFormat::Canonical => LogFormat::Canonical,
            RetecsLogFormat::Abb => LogFormat::Abb,
        };
        let ds = load_dataset(Path::new(path), format)?;
        *out = Box::into_raw(Box::new(RetecsDataset(ds)));
        Ok(())
    })
}

/// Generates a synthetic history.
///
/// # Safety
/// `config` must point to a valid config and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn retecs_dataset_synth(
    config: *const RetecsSynthConfig,
    out: *mut *mut RetecsDataset,
) -> RetecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = ref_arg(config, "config")?;
        let ds = synth_generate(&SynthConfig {
            test_count: c.test_count,
            cycle_count: c.cycle_count,
            always_fail_fraction: c.always_fail_fraction,
            noise_flip_probability: c.noise_flip_probability,
            min_duration: c.min_duration,
            max_duration: c.max_duration,
            seed: c.seed,
        })?;
        *out = Box::into_raw(Box::new(RetecsDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn retecs_dataset_stats(
    dataset: *const RetecsDataset,
    out: *mut RetecsDatasetStats,
) -> RetecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = ref_arg(dataset, "dataset")?.0.stats();
        *out = RetecsDatasetStats {
            distinct_tests: s.distinct_tests,
            commit_count: s.commit_count,
            execution_count: s.execution_count,
            failed_fraction: s.failed_fraction,
        };
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a pointer obtained from this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn retecs_dataset_free(dataset: *mut RetecsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

unsafe fn experiment_config(c: &RetecsRunConfig) -> Result<ExperimentConfig, Failure> {
    let defaults = AgentConfig::default();
    let hidden_layers = if c.hidden_layers.is_null() {
        if c.hidden_layer_count != 0 {
            return Err(null("hidden_layers"));
        }
        defaults.hidden_layers.clone()
    } else {
        std::slice::from_raw_parts(c.hidden_layers, c.hidden_layer_count).to_vec()
    };
    let agent = match c.agent {
        RetecsAgent::Network => AgentKind::Network,
        RetecsAgent::Tree => AgentKind::Tree,
        RetecsAgent::Random => AgentKind::Random,
        RetecsAgent::Sorting => AgentKind::Sorting,
        RetecsAgent::Weighting => AgentKind::Weighting,
    };
    let reward = match c.reward {
        RetecsReward::FailureCount => RewardFunction::FailureCount,
        RetecsReward::TestCaseFailure => RewardFunction::TestCaseFailure,
        RetecsReward::TimeRanked => RewardFunction::TimeRanked,
    };
    let mut agent_config = AgentConfig {
        history_length: c.history_length,
        reward,
        hidden_layers,
        noise_std: c.noise_std,
        noise_decay: c.noise_decay,
        seed: c.seed,
        ..defaults
    };
    agent_config.train.learning_rate = c.learning_rate;
    Ok(ExperimentConfig {
        agent,
        agent_config,
        budget_ratio: c.budget_ratio,
        iterations: c.iterations,
        ..Default::default()
    })
}

/// Replays `dataset` with the configured agent.
///
/// # Safety
/// `dataset` must come from this library, `config` must be valid (with
/// `hidden_layer_count` readable entries behind `hidden_layers` when it is
/// non-null) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn retecs_experiment_run(
    dataset: *const RetecsDataset,
    config: *const RetecsRunConfig,
    out: *mut *mut RetecsExperiment,
) -> RetecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = &ref_arg(dataset, "dataset")?.0;
        let cfg = experiment_config(ref_arg(config, "config")?)?;
        let result = run_experiment_on(&cfg, ds)?;
        *out = Box::into_raw(Box::new(RetecsExperiment(result)));
        Ok(())
    })
}

/// Number of cycles in the mean NAPFD series; 0 for a null handle.
///
/// # Safety
/// `experiment` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn retecs_experiment_cycle_count(
    experiment: *const RetecsExperiment,
) -> usize {
    experiment.as_ref().map_or(0, |e| e.0.mean.len())
}

/// Copies the per-cycle mean NAPFD into `values`, which must hold at least
/// `capacity` doubles; `capacity` must be at least the cycle count.
///
/// # Safety
/// `experiment` must come from this library and `values` must be writable
/// for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn retecs_experiment_mean_napfd(
    experiment: *const RetecsExperiment,
    values: *mut f64,
    capacity: usize,
) -> RetecsStatus {
    guard(|| {
        let mean = &ref_arg(experiment, "experiment")?.0.mean;
        if values.is_null() {
            return Err(null("values"));
        }
        if capacity < mean.len() {
            return Err(Failure(
                RetecsStatus::InvalidArgument,
                format!("capacity {capacity} below cycle count {}", mean.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(values, mean.len());
        for (d, v) in dst.iter_mut().zip(mean.values()) {
            *d = v;
        }
        Ok(())
    })
}

/// Least-squares trend of the mean series. Fails with `RETECS_STATUS_EMPTY`
/// for datasets with fewer than two cycles.
///
/// # Safety
/// `experiment` must come from this library; `slope` and `intercept` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn retecs_experiment_trend(
    experiment: *const RetecsExperiment,
    slope: *mut f64,
    intercept: *mut f64,
) -> RetecsStatus {
    guard(|| {
        let e = &ref_arg(experiment, "experiment")?.0;
        let slope = out_arg(slope, "slope")?;
        let intercept = out_arg(intercept, "intercept")?;
        let t = e.trend.ok_or(Failure(
            RetecsStatus::Empty,
            "trend needs at least two cycles".into(),
        ))?;
        *slope = t.slope;
        *intercept = t.intercept;
        Ok(())
    })
}

/// # Safety
/// `experiment` must be null or a pointer obtained from this library that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn retecs_experiment_free(experiment: *mut RetecsExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// NAPFD of a schedule over a pool of `pool_size` tests numbered from 0.
/// `failed[i]` is non-zero when test `i` failed; `order` lists the
/// `scheduled` executed tests, first to last.
///
/// # Safety
/// `failed` must be readable for `pool_size` bytes, `order` for `scheduled`
/// elements (it may be null when `scheduled` is 0) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn retecs_napfd(
    failed: *const u8,
    pool_size: usize,
    order: *const usize,
    scheduled: usize,
    out: *mut f64,
) -> RetecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if failed.is_null() && pool_size > 0 {
            return Err(null("failed"));
        }
        if order.is_null() && scheduled > 0 {
            return Err(null("order"));
        }
        let failed = if pool_size == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(failed, pool_size)
        };
        let order = if scheduled == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(order, scheduled)
        };
        let id = |i: usize| TestId::new(i.to_string()).map_err(Failure::from);
        let records = failed
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let status = if f != 0 {
                    Status::Failed
                } else {
                    Status::Passed
                };
                Ok(TestCaseRecord::new(id(i)?, 0.0, status, 0)?)
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let cycle = CiCycle::new(0, records)?;
        if let Some(&bad) = order.iter().find(|&&t| t >= pool_size) {
            return Err(Failure(
                RetecsStatus::InvalidArgument,
                format!("scheduled test {bad} outside pool of {pool_size}"),
            ));
        }
        let tests = order
            .iter()
            .map(|&t| id(t))
            .collect::<Result<Vec<_>, _>>()?;
        let schedule = Schedule::new(tests, pool_size)?;
        *out = retecs::napfd(&schedule, &cycle, cycle.failure_count())?;
        Ok(())
    })
}
