//! Prioritization agents: the learning agent (prioritize, schedule, reward,
//! learn) and the three non-learning baselines it is compared against.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::approx::{
    fit_tree, Approximator, Experience, NeuralModel, ReplayBuffer, TrainParams, TreeModel,
    TreeParams,
};
use crate::domain::{
    normalized_duration, recency, state_vector, CiCycle, ExecutionLog, FeatureVector, History,
    Schedule, TestId,
};
use crate::error::{Error, Result};
use crate::rewards::{RewardAssignment, RewardFunction};

/// Priority for every test of a cycle's pool. Higher runs earlier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorityAssignment {
    pub per_test: BTreeMap<TestId, f64>,
}

impl PriorityAssignment {
    pub fn get(&self, test: &TestId) -> Option<f64> {
        self.per_test.get(test).copied()
    }

    pub fn len(&self) -> usize {
        self.per_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_test.is_empty()
    }
}

impl FromIterator<(TestId, f64)> for PriorityAssignment {
    fn from_iter<I: IntoIterator<Item = (TestId, f64)>>(iter: I) -> Self {
        PriorityAssignment {
            per_test: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Network,
    Tree,
    Random,
    Sorting,
    Weighting,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Network,
        AgentKind::Tree,
        AgentKind::Random,
        AgentKind::Sorting,
        AgentKind::Weighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Network => "network",
            AgentKind::Tree => "tree",
            AgentKind::Random => "random",
            AgentKind::Sorting => "sorting",
            AgentKind::Weighting => "weighting",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, AgentKind::Network | AgentKind::Tree)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown agent '{s}' (expected network, tree, random, sorting or weighting)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Number of past verdicts in the state (H).
    pub history_length: usize,
    pub reward: RewardFunction,
    pub hidden_layers: Vec<usize>,
    pub train: TrainParams,
    /// Experiences sampled from the replay buffer per cycle.
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub tree: TreeParams,
    /// Initial standard deviation of the additive exploration noise.
    pub noise_std: f64,
    /// Multiplier applied to the noise std after every cycle.
    pub noise_decay: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            history_length: 4,
            reward: RewardFunction::TestCaseFailure,
            hidden_layers: vec![32],
            train: TrainParams::default(),
            batch_size: 1000,
            replay_capacity: 10_000,
            tree: TreeParams::default(),
            noise_std: 0.3,
            noise_decay: 0.995,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.history_length == 0 {
            return fail("history length must be at least 1".into());
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return fail(format!(
                "noise decay must lie in (0, 1], got {}",
                self.noise_decay
            ));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return fail(format!(
                "noise std must be non-negative, got {}",
                self.noise_std
            ));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return fail("batch size and replay capacity must be positive".into());
        }
        if self.hidden_layers.contains(&0) {
            return fail(format!(
                "hidden layer sizes must be positive: {:?}",
                self.hidden_layers
            ));
        }
        if !self.train.learning_rate.is_finite()
            || self.train.learning_rate <= 0.0
            || self.train.minibatch_size == 0
        {
            return fail(format!("invalid training parameters {:?}", self.train));
        }
        self.tree.validate()
    }

    /// Width of the state vector fed to the approximator.
    pub fn input_dim(&self) -> usize {
        2 + self.history_length
    }
}

/// Anything that can rank a cycle's pool.
pub trait Prioritizer: Send {
    fn kind(&self) -> AgentKind;

    /// `history` must not yet contain `cycle`'s own records.
    fn prioritize(&mut self, cycle: &CiCycle, history: &History) -> Result<PriorityAssignment>;

    /// Feedback after the schedule ran. Baselines ignore it.
    fn observe(
        &mut self,
        _cycle: &CiCycle,
        _schedule: &Schedule,
        _rewards: &RewardAssignment,
    ) -> Result<()> {
        Ok(())
    }
}

pub fn build_agent(kind: AgentKind, config: &AgentConfig) -> Result<Box<dyn Prioritizer>> {
    config.validate()?;
    Ok(match kind {
        AgentKind::Network | AgentKind::Tree => Box::new(RlAgent::new(kind, config.clone())?),
        AgentKind::Random => Box::new(RandomBaseline::new(config.seed)),
        AgentKind::Sorting => Box::new(SortingBaseline),
        AgentKind::Weighting => Box::new(WeightingBaseline {
            history_length: config.history_length,
        }),
    })
}

#[derive(Debug, Clone)]
enum Model {
    Network(NeuralModel),
    /// `None` until the first fit; an unfitted tree predicts 0 everywhere.
    Tree(Option<TreeModel>),
}

/// The reinforcement-learning prioritizer.
///
/// Each pool test is scored independently as `v(state) + noise`. After the
/// schedule ran, the `(state, reward)` pairs of the scheduled tests enter a
/// replay buffer and the approximator is refit on a seeded sample of it.
#[derive(Debug, Clone)]
pub struct RlAgent {
    config: AgentConfig,
    model: Model,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    noise_std: f64,
    learning_rate: f64,
    /// States computed by the last `prioritize`, consumed by `observe`.
    pending: HashMap<TestId, FeatureVector>,
}

impl RlAgent {
    pub fn new(kind: AgentKind, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = match kind {
            AgentKind::Network => Model::Network(NeuralModel::new(
                config.input_dim(),
                &config.hidden_layers,
                &mut rng,
            )?),
            AgentKind::Tree => Model::Tree(None),
            other => {
                return Err(Error::Config(format!("{other} is not a learning agent")));
            }
        };
        Ok(RlAgent {
            buffer: ReplayBuffer::new(config.replay_capacity)?,
            noise_std: config.noise_std,
            learning_rate: config.train.learning_rate,
            config,
            model,
            rng,
            pending: HashMap::new(),
        })
    }

    /// Replaces the network's parameters; mainly for tests and checkpoints.
    pub fn with_network(mut self, model: NeuralModel) -> Result<Self> {
        if model.input_dim() != self.config.input_dim() {
            return Err(Error::Config(format!(
                "network input {} does not match state width {}",
                model.input_dim(),
                self.config.input_dim()
            )));
        }
        self.model = Model::Network(model);
        Ok(self)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn approximator(&self) -> Option<Approximator> {
        match &self.model {
            Model::Network(m) => Some(Approximator::Network(m.clone())),
            Model::Tree(t) => t.clone().map(Approximator::Tree),
        }
    }

    /// Noise-free value estimate for a state.
    pub fn value(&self, state: &FeatureVector) -> Result<f64> {
        let input = state.to_input();
        match &self.model {
            Model::Network(m) => m.predict(&input),
            Model::Tree(Some(t)) => t.predict(&input),
            Model::Tree(None) => {
                if input.len() != self.config.input_dim() {
                    return Err(Error::Config("state width does not match agent".into()));
                }
                Ok(0.0)
            }
        }
    }

    pub fn state_for(
        &self,
        cycle: &CiCycle,
        test: &TestId,
        history: &History,
    ) -> Option<FeatureVector> {
        let record = cycle.record(test)?;
        let empty = ExecutionLog::default();
        Some(state_vector(
            record.duration,
            cycle.index(),
            history.log(test).unwrap_or(&empty),
            self.config.history_length,
            cycle.max_duration(),
        ))
    }

    /// Appends the scheduled tests' experience and refits the approximator.
    pub fn observe_and_learn(
        &mut self,
        cycle: &CiCycle,
        schedule: &Schedule,
        rewards: &RewardAssignment,
    ) -> Result<()> {
        for test in schedule.ordered_tests() {
            let state = self.pending.remove(test).ok_or_else(|| {
                Error::Integrity(format!(
                    "test {test} was scheduled in cycle {} without being prioritized",
                    cycle.index()
                ))
            })?;
            let reward = rewards
                .get(test)
                .ok_or_else(|| Error::Integrity(format!("no reward for scheduled test {test}")))?;
            self.buffer.push(Experience::new(state, reward)?);
        }
        self.pending.clear();
        if self.buffer.is_empty() {
            return Ok(());
        }
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng);
        match &mut self.model {
            Model::Network(net) => {
                // halve the step on divergence; the model is untouched by a failed fit
                let mut attempts = 0;
                loop {
                    let params = TrainParams {
                        learning_rate: self.learning_rate,
                        ..self.config.train
                    };
                    match net.fit(&batch, &params) {
                        Ok(_) => break,
                        Err(Error::Divergence { .. }) if attempts < 20 => {
                            self.learning_rate /= 2.0;
                            attempts += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Model::Tree(slot) => *slot = Some(fit_tree(&batch, &self.config.tree)?),
        }
        Ok(())
    }
}

impl Prioritizer for RlAgent {
    fn kind(&self) -> AgentKind {
        match self.model {
            Model::Network(_) => AgentKind::Network,
            Model::Tree(_) => AgentKind::Tree,
        }
    }

    fn prioritize(&mut self, cycle: &CiCycle, history: &History) -> Result<PriorityAssignment> {
        let noise = if self.noise_std > 0.0 {
            Some(Normal::new(0.0, self.noise_std).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        let max_duration = cycle.max_duration();
        let empty = ExecutionLog::default();
        self.pending.clear();
        let mut per_test = BTreeMap::new();
        for r in cycle.records() {
            let state = state_vector(
                r.duration,
                cycle.index(),
                history.log(&r.test).unwrap_or(&empty),
                self.config.history_length,
                max_duration,
            );
            let mut priority = self.value(&state)?;
            if let Some(n) = &noise {
                priority += n.sample(&mut self.rng);
            }
            if !priority.is_finite() {
                return Err(Error::Divergence { loss: priority });
            }
            per_test.insert(r.test.clone(), priority);
            self.pending.insert(r.test.clone(), state);
        }
        self.noise_std *= self.config.noise_decay;
        Ok(PriorityAssignment { per_test })
    }

    fn observe(
        &mut self,
        cycle: &CiCycle,
        schedule: &Schedule,
        rewards: &RewardAssignment,
    ) -> Result<()> {
        self.observe_and_learn(cycle, schedule, rewards)
    }
}

/// Uniform priorities in `[0, 1)`, drawn in record order.
pub fn baseline_random<R: Rng + ?Sized>(cycle: &CiCycle, rng: &mut R) -> PriorityAssignment {
    cycle
        .records()
        .iter()
        .map(|r| (r.test.clone(), rng.random::<f64>()))
        .collect()
}

/// 1 if the most recent verdict was a failure or the test never ran, else 0.
pub fn baseline_sorting(cycle: &CiCycle, history: &History) -> PriorityAssignment {
    cycle
        .records()
        .iter()
        .map(|r| {
            let p = match history.log(&r.test).and_then(ExecutionLog::latest) {
                Some(last) => last.status.failure_indicator(),
                None => 1.0,
            };
            (r.test.clone(), p)
        })
        .collect()
}

/// Equal-weight mean of failure rate over the last H runs, recency and
/// normalized duration.
pub fn baseline_weighting(
    cycle: &CiCycle,
    history: &History,
    history_length: usize,
) -> PriorityAssignment {
    let max_duration = cycle.max_duration();
    let empty = ExecutionLog::default();
    cycle
        .records()
        .iter()
        .map(|r| {
            let log = history.log(&r.test).unwrap_or(&empty);
            let window = log.len().min(history_length);
            let fail_rate = if window == 0 {
                0.0
            } else {
                log.iter()
                    .take(window)
                    .map(|e| e.status.failure_indicator())
                    .sum::<f64>()
                    / window as f64
            };
            let p = weighted_priority(
                fail_rate,
                recency(cycle.index(), log),
                normalized_duration(r.duration, max_duration),
            );
            (r.test.clone(), p)
        })
        .collect()
}

pub fn weighted_priority(fail_rate: f64, recency: f64, normalized_duration: f64) -> f64 {
    (fail_rate + recency + normalized_duration) / 3.0
}

#[derive(Debug, Clone)]
pub struct RandomBaseline {
    rng: ChaCha8Rng,
}

impl RandomBaseline {
    pub fn new(seed: u64) -> Self {
        RandomBaseline {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Prioritizer for RandomBaseline {
    fn kind(&self) -> AgentKind {
        AgentKind::Random
    }

    fn prioritize(&mut self, cycle: &CiCycle, _history: &History) -> Result<PriorityAssignment> {
        Ok(baseline_random(cycle, &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SortingBaseline;

impl Prioritizer for SortingBaseline {
    fn kind(&self) -> AgentKind {
        AgentKind::Sorting
    }

    fn prioritize(&mut self, cycle: &CiCycle, history: &History) -> Result<PriorityAssignment> {
        Ok(baseline_sorting(cycle, history))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WeightingBaseline {
    pub history_length: usize,
}

impl Prioritizer for WeightingBaseline {
    fn kind(&self) -> AgentKind {
        AgentKind::Weighting
    }

    fn prioritize(&mut self, cycle: &CiCycle, history: &History) -> Result<PriorityAssignment> {
        Ok(baseline_weighting(cycle, history, self.history_length))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Status, TestCaseRecord};

    fn id(s: &str) -> TestId {
        TestId::new(s).unwrap()
    }

    fn cycle(index: usize, entries: &[(&str, f64, Status)]) -> CiCycle {
        CiCycle::new(
            index,
            entries
                .iter()
                .map(|&(t, d, s)| TestCaseRecord::new(id(t), d, s, index).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn quiet(kind_seed: u64) -> AgentConfig {
        AgentConfig {
            noise_std: 0.0,
            seed: kind_seed,
            ..AgentConfig::default()
        }
    }

    use Status::{Failed as F, Passed as P};

    #[test]
    fn names_parse() {
        for k in AgentKind::ALL {
            assert_eq!(k.name().parse::<AgentKind>().unwrap(), k);
        }
        assert!("dqn".parse::<AgentKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig {
            history_length: 0,
            ..quiet(0)
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            noise_decay: 0.0,
            ..quiet(0)
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            noise_decay: 1.2,
            ..quiet(0)
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            noise_std: -0.1,
            ..quiet(0)
        }
        .validate()
        .is_err());
        assert!(quiet(0).validate().is_ok());
    }

    #[test]
    fn zero_network_gives_equal_priorities() {
        let agent = RlAgent::new(AgentKind::Network, quiet(1)).unwrap();
        let mut agent = agent
            .with_network(NeuralModel::zeros(6, &[32]).unwrap())
            .unwrap();
        let c = cycle(0, &[("a", 1.0, P), ("b", 5.0, F), ("c", 2.0, P)]);
        let p = agent.prioritize(&c, &History::new()).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.per_test.values().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_prioritize_is_pure() {
        let mut agent = RlAgent::new(AgentKind::Network, quiet(2)).unwrap();
        let c = cycle(3, &[("a", 1.0, P), ("b", 5.0, F), ("c", 2.0, P)]);
        let mut h = History::new();
        h.record_cycle(&cycle(1, &[("a", 1.0, F), ("b", 5.0, P)]));
        let first = agent.prioritize(&c, &h).unwrap();
        let second = agent.prioritize(&c, &h).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn noise_decays_per_cycle() {
        let cfg = AgentConfig {
            noise_std: 0.3,
            noise_decay: 0.5,
            ..quiet(0)
        };
        let mut agent = RlAgent::new(AgentKind::Network, cfg).unwrap();
        let c = cycle(0, &[("a", 1.0, P)]);
        agent.prioritize(&c, &History::new()).unwrap();
        assert!((agent.noise_std() - 0.15).abs() < 1e-15);
    }

    fn state(history: &[f64]) -> FeatureVector {
        FeatureVector {
            normalized_duration: 0.5,
            recency: 1.0,
            failure_history: history.to_vec(),
        }
    }

    #[test]
    fn tree_ranks_failing_history_above_passing() {
        let mut agent = RlAgent::new(AgentKind::Tree, quiet(3)).unwrap();
        let batch: Vec<Experience> = (0..10)
            .flat_map(|_| {
                [
                    Experience::new(state(&[1.0; 4]), 1.0).unwrap(),
                    Experience::new(state(&[0.0; 4]), 0.0).unwrap(),
                ]
            })
            .collect();
        agent.model = Model::Tree(Some(fit_tree(&batch, &agent.config.tree).unwrap()));
        let fail = agent.value(&state(&[1.0; 4])).unwrap();
        let pass = agent.value(&state(&[0.0; 4])).unwrap();
        assert!(fail > pass, "{fail} <= {pass}");
    }

    #[test]
    fn observe_grows_buffer_by_schedule_length() {
        let mut agent = RlAgent::new(AgentKind::Network, quiet(4)).unwrap();
        let c = cycle(0, &[("a", 1.0, F), ("b", 1.0, P), ("c", 1.0, P)]);
        let h = History::new();
        agent.prioritize(&c, &h).unwrap();
        let s = Schedule::new(vec![id("b"), id("a")], 3).unwrap();
        let r = RewardFunction::TestCaseFailure.evaluate(&c, &s).unwrap();
        agent.observe_and_learn(&c, &s, &r).unwrap();
        assert_eq!(agent.buffer().len(), 2);
    }

    #[test]
    fn full_buffer_evicts() {
        let cfg = AgentConfig {
            replay_capacity: 3,
            ..quiet(5)
        };
        let mut agent = RlAgent::new(AgentKind::Tree, cfg).unwrap();
        let mut h = History::new();
        for i in 0..4 {
            let c = cycle(i, &[("a", 1.0, F), ("b", 1.0, P)]);
            agent.prioritize(&c, &h).unwrap();
            let s = c.full_schedule();
            let r = RewardFunction::TestCaseFailure.evaluate(&c, &s).unwrap();
            agent.observe_and_learn(&c, &s, &r).unwrap();
            h.record_cycle(&c);
            assert_eq!(agent.buffer().len(), (2 * (i + 1)).min(3));
        }
    }

    #[test]
    fn observe_without_prioritize_is_integrity_error() {
        let mut agent = RlAgent::new(AgentKind::Network, quiet(6)).unwrap();
        let c = cycle(0, &[("a", 1.0, F)]);
        let s = c.full_schedule();
        let r = RewardFunction::TestCaseFailure.evaluate(&c, &s).unwrap();
        assert!(matches!(
            agent.observe_and_learn(&c, &s, &r),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn random_baseline_is_seeded_and_in_range() {
        let names: Vec<String> = (0..12).map(|i| format!("t{i:02}")).collect();
        let entries: Vec<(&str, f64, Status)> =
            names.iter().map(|n| (n.as_str(), 1.0, P)).collect();
        let c = cycle(0, &entries);
        let a = baseline_random(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let b = baseline_random(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let other = baseline_random(&c, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert!(a.per_test.values().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn sorting_baseline_examples() {
        let mut h = History::new();
        h.record_cycle(&cycle(0, &[("f", 1.0, F), ("p", 1.0, P)]));
        let c = cycle(1, &[("f", 1.0, P), ("p", 1.0, P), ("new", 1.0, P)]);
        let p = baseline_sorting(&c, &h);
        assert_eq!(p.get(&id("f")), Some(1.0));
        assert_eq!(p.get(&id("p")), Some(0.0));
        assert_eq!(p.get(&id("new")), Some(1.0));

        let mut h = History::new();
        h.record_cycle(&cycle(0, &[("a", 1.0, P), ("b", 1.0, P)]));
        let p = baseline_sorting(&cycle(1, &[("a", 1.0, P), ("b", 1.0, P)]), &h);
        assert!(p.per_test.values().all(|&v| v == 0.0));
    }

    #[test]
    fn weighting_baseline_examples() {
        assert!((weighted_priority(1.0, 1.0, 0.5) - 2.5 / 3.0).abs() < 1e-15);

        // never-run, zero duration at cycle 2: recency 1/3
        let c = cycle(2, &[("n", 0.0, P), ("m", 4.0, P)]);
        let p = baseline_weighting(&c, &History::new(), 4);
        assert!((p.get(&id("n")).unwrap() - (1.0 / 3.0) / 3.0).abs() < 1e-15);

        // failed in both of its two runs, last run one cycle ago, half the max duration
        let mut h = History::new();
        h.record_cycle(&cycle(0, &[("a", 2.0, F)]));
        h.record_cycle(&cycle(1, &[("a", 2.0, F), ("b", 2.0, F)]));
        let c = cycle(1 + 1, &[("a", 2.0, P), ("b", 2.0, P), ("z", 4.0, P)]);
        let p = baseline_weighting(&c, &h, 4);
        let expected = (1.0 + 0.5 + 0.5) / 3.0;
        assert!((p.get(&id("a")).unwrap() - expected).abs() < 1e-15);
        assert_eq!(p.get(&id("a")), p.get(&id("b")));
    }
}
