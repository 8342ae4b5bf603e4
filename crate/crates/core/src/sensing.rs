//! Budgeted, possibly adaptive measurement protocol.
//!
//! A strategy emits query sets given the history; [`run_session`] drives it,
//! enforces the coordinate-measurement budget `sum_t |A^t| <= M`, and collects
//! observations. A strategy whose query would exceed the remaining budget
//! receives a refusal signal and must terminate; emitting again after refusal
//! is a protocol error. (The alternative convention of padding with empty
//! queries changes nothing for the procedures implemented here.)
//!
//! Strategies carry two separate random streams: internal randomization (for
//! example a coordinate subsample drawn at construction) is fixed before the
//! session, while observation noise flows through the stream handed to
//! `run_session`. This lets worst-case evaluation replay strategy randomness
//! independently of the data.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::rng::Stream;

/// Coordinate-measurement ledger. `consumed <= total` at all times; every
/// accepted query increments `consumed` by exactly its cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    total: u64,
    consumed: u64,
}

impl Budget {
    pub fn new(total: u64) -> Self {
        Budget { total, consumed: 0 }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.consumed
    }

    fn charge(&mut self, cost: u64) {
        self.consumed += cost;
        assert!(
            self.consumed <= self.total,
            "budget ledger violated: consumed {} > total {}",
            self.consumed,
            self.total
        );
    }
}

/// One sensing round: the query set and the observed values, aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub query: Vec<u32>,
    pub obs: Vec<f64>,
}

/// The realized history `(A^1, X^1, ..., A^T, X^T)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    rounds: Vec<Round>,
}

impl History {
    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn total_cost(&self) -> u64 {
        self.rounds.iter().map(|r| r.query.len() as u64).sum()
    }

    /// One JSONL line per round: `{"t": int, "query": [int], "obs": [float]}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, round) in self.rounds.iter().enumerate() {
            let line = serde_json::json!({
                "t": i + 1,
                "query": round.query,
                "obs": round.obs,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses a JSONL trace produced by [`History::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            t: usize,
            query: Vec<u32>,
            obs: Vec<f64>,
        }
        let mut rounds = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| Error::InvalidInstance(format!("trace line {}: {e}", lineno + 1)))?;
            if parsed.t != rounds.len() + 1 {
                return Err(Error::InvalidInstance(format!(
                    "trace line {}: round index {} out of order",
                    lineno + 1,
                    parsed.t
                )));
            }
            if parsed.obs.len() != parsed.query.len() {
                return Err(Error::InvalidInstance(format!(
                    "trace line {}: {} observations for {} queried coordinates",
                    lineno + 1,
                    parsed.obs.len(),
                    parsed.query.len()
                )));
            }
            rounds.push(Round {
                query: parsed.query,
                obs: parsed.obs,
            });
        }
        Ok(History { rounds })
    }
}

/// What a strategy wants to do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategySignal {
    Query(Vec<u32>),
    Done,
}

/// Behavioral contract for sensing strategies.
///
/// A non-adaptive strategy's query sequence must be a deterministic function
/// of its construction parameters and its own randomization stream only,
/// never of observed values.
pub trait SensingStrategy {
    /// The next query given the history so far. Observation values are only
    /// meaningful to adaptive strategies.
    fn next_query(&mut self, history: &History, rng: &mut Stream) -> StrategySignal;

    /// Signals that the last emitted query exceeded the remaining budget.
    /// The strategy must answer `Done` on the next call.
    fn budget_refused(&mut self) {}

    /// Declared adaptivity flag.
    fn is_adaptive(&self) -> bool;
}

/// Completed-session counters used by the acceptance suite's budget audit.
static SESSIONS_COMPLETED: AtomicU64 = AtomicU64::new(0);
static BUDGET_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of sessions completed by this process.
pub fn sessions_completed() -> u64 {
    SESSIONS_COMPLETED.load(Ordering::Relaxed)
}

/// Number of sessions whose final ledger violated the budget. Always zero;
/// a violation also panics at charge time.
pub fn budget_violations() -> u64 {
    BUDGET_VIOLATIONS.load(Ordering::Relaxed)
}

/// Outcome of a completed sensing session.
#[derive(Debug, Clone)]
pub struct Session {
    pub history: History,
    pub budget: Budget,
    /// Whether the session ended because a query was refused for budget
    /// reasons (as opposed to the strategy finishing on its own).
    pub stopped_by_refusal: bool,
}

/// Drives `strategy` against `instance` until it finishes or the budget
/// refuses a query. Every accepted round draws one fresh latent vector.
pub fn run_session(
    strategy: &mut dyn SensingStrategy,
    instance: &ProblemInstance,
    budget: Budget,
    rng: &mut Stream,
) -> Result<Session> {
    if budget.total() < 1 {
        return Err(Error::InvalidStrategy("budget must be at least 1".into()));
    }
    let mut budget = budget;
    let mut history = History::default();
    let mut refused = false;
    let mut stopped_by_refusal = false;
    loop {
        match strategy.next_query(&history, rng) {
            StrategySignal::Done => break,
            StrategySignal::Query(_) if refused => {
                return Err(Error::ProtocolViolation);
            }
            StrategySignal::Query(query) => {
                if query.is_empty() {
                    return Err(Error::EmptyQuery);
                }
                let cost = query.len() as u64;
                if cost > budget.remaining() {
                    strategy.budget_refused();
                    refused = true;
                    stopped_by_refusal = true;
                    continue;
                }
                let obs = instance.sample_round(&query, rng)?;
                budget.charge(cost);
                history.rounds.push(Round { query, obs });
            }
        }
    }
    if history.total_cost() > budget.total() {
        BUDGET_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        panic!("session history exceeds budget");
    }
    SESSIONS_COMPLETED.fetch_add(1, Ordering::Relaxed);
    Ok(Session {
        history,
        budget,
        stopped_by_refusal,
    })
}

/// Uniform sensing: `A^t = [n]` for `t = 1..=m`, then done. Costs `m * n`.
#[derive(Debug, Clone)]
pub struct UniformStrategy {
    n: u32,
    rounds_left: u32,
    done: bool,
}

impl UniformStrategy {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidStrategy(
                "uniform sensing needs n >= 1, m >= 1".into(),
            ));
        }
        Ok(UniformStrategy {
            n,
            rounds_left: m,
            done: false,
        })
    }
}

impl SensingStrategy for UniformStrategy {
    fn next_query(&mut self, _history: &History, _rng: &mut Stream) -> StrategySignal {
        if self.done || self.rounds_left == 0 {
            return StrategySignal::Done;
        }
        self.rounds_left -= 1;
        StrategySignal::Query((1..=self.n).collect())
    }

    fn budget_refused(&mut self) {
        self.done = true;
    }

    fn is_adaptive(&self) -> bool {
        false
    }
}

/// Deterministic p-truncated interval sensing: keeps the first `p`
/// coordinates of every disjoint k-interval and measures that union
/// `floor(m k / p)` times, for a total cost of at most `m n`.
#[derive(Debug, Clone)]
pub struct TruncatedIntervalStrategy {
    query: Vec<u32>,
    rounds_left: u64,
    done: bool,
}

impl TruncatedIntervalStrategy {
    pub fn new(n: u32, k: u32, p: u32, m: u32) -> Result<Self> {
        if k == 0 || n < k {
            return Err(Error::InvalidStrategy("need 1 <= k <= n".into()));
        }
        if !(2..=k).contains(&p) {
            return Err(Error::InvalidStrategy(format!(
                "p = {p} outside [2, k = {k}]"
            )));
        }
        if !n.is_multiple_of(k) {
            return Err(Error::InvalidStrategy("k must divide n".into()));
        }
        let blocks = n / k;
        let mut query = Vec::with_capacity((blocks * p) as usize);
        for j in 0..blocks {
            let start = j * k + 1;
            query.extend(start..start + p);
        }
        let rounds = (m as u64 * k as u64) / p as u64;
        Ok(TruncatedIntervalStrategy {
            query,
            rounds_left: rounds,
            done: false,
        })
    }

    /// The fixed per-round query (union of truncated intervals).
    pub fn query(&self) -> &[u32] {
        &self.query
    }
}

impl SensingStrategy for TruncatedIntervalStrategy {
    fn next_query(&mut self, _history: &History, _rng: &mut Stream) -> StrategySignal {
        if self.done || self.rounds_left == 0 {
            return StrategySignal::Done;
        }
        self.rounds_left -= 1;
        StrategySignal::Query(self.query.clone())
    }

    fn budget_refused(&mut self) {
        self.done = true;
    }

    fn is_adaptive(&self) -> bool {
        false
    }
}

/// Randomized subsampling: a set `B` of `floor(2 n p / k)` coordinates drawn
/// without replacement at construction (from the strategy's own stream), then
/// measured `floor(m k / (2 p))` times. Non-adaptive: the subsample is decided
/// before any data is collected.
#[derive(Debug, Clone)]
pub struct RandomizedSubsampleStrategy {
    subsample: Vec<u32>,
    rounds_left: u64,
    done: bool,
}

impl RandomizedSubsampleStrategy {
    pub fn new(n: u32, k: u32, p: f64, m: u32, internal: &mut Stream) -> Result<Self> {
        if k == 0 || n < k {
            return Err(Error::InvalidStrategy("need 1 <= k <= n".into()));
        }
        if !(2.0..=k as f64).contains(&p) {
            return Err(Error::InvalidStrategy(format!(
                "p = {p} outside [2, k = {k}]"
            )));
        }
        let size = ((2.0 * n as f64 * p) / k as f64).floor() as u64;
        if size > n as u64 {
            return Err(Error::InvalidStrategy(format!(
                "subsample size {size} exceeds ambient dimension {n}"
            )));
        }
        if size == 0 {
            return Err(Error::InvalidStrategy("subsample is empty".into()));
        }
        let subsample = draw_without_replacement(n, size as u32, internal);
        let rounds = ((m as f64 * k as f64) / (2.0 * p)).floor() as u64;
        Ok(RandomizedSubsampleStrategy {
            subsample,
            rounds_left: rounds,
            done: false,
        })
    }

    pub fn subsample(&self) -> &[u32] {
        &self.subsample
    }

    pub fn rounds(&self) -> u64 {
        self.rounds_left
    }
}

impl SensingStrategy for RandomizedSubsampleStrategy {
    fn next_query(&mut self, _history: &History, _rng: &mut Stream) -> StrategySignal {
        if self.done || self.rounds_left == 0 {
            return StrategySignal::Done;
        }
        self.rounds_left -= 1;
        StrategySignal::Query(self.subsample.clone())
    }

    fn budget_refused(&mut self) {
        self.done = true;
    }

    fn is_adaptive(&self) -> bool {
        false
    }
}

/// Draws `size` coordinates from `1..=n` without replacement, sorted.
/// Floyd's algorithm: uniform over subsets, O(size) expected work.
pub fn draw_without_replacement(n: u32, size: u32, rng: &mut Stream) -> Vec<u32> {
    use rand::Rng;
    let mut chosen = std::collections::BTreeSet::new();
    for j in (n - size + 1)..=n {
        let t = rng.gen_range(1..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// One singleton query per round following a fixed schedule. Each round is a
/// fresh latent draw, so repeated visits to the same coordinate yield
/// independent samples.
#[derive(Debug, Clone)]
pub struct SingletonRoundsStrategy {
    schedule: Vec<u32>,
    next: usize,
    done: bool,
}

impl SingletonRoundsStrategy {
    pub fn new(schedule: Vec<u32>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidStrategy("schedule must be nonempty".into()));
        }
        Ok(SingletonRoundsStrategy {
            schedule,
            next: 0,
            done: false,
        })
    }
}

impl SensingStrategy for SingletonRoundsStrategy {
    fn next_query(&mut self, _history: &History, _rng: &mut Stream) -> StrategySignal {
        if self.done || self.next >= self.schedule.len() {
            return StrategySignal::Done;
        }
        let coord = self.schedule[self.next];
        self.next += 1;
        StrategySignal::Query(vec![coord])
    }

    fn budget_refused(&mut self) {
        self.done = true;
    }

    fn is_adaptive(&self) -> bool {
        false
    }
}
