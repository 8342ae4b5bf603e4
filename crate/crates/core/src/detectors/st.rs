//! Generic sequential thresholding over vector rows.
//!
//! The tested object is an `n_rows x d` matrix whose rows are observed
//! through the sensing budget. Each pass draws `m_bar` fresh observations of
//! every surviving row, scores each row by its summed log-likelihood ratio
//! (oriented so that data favoring the alternative scores high), and retains
//! the rows scoring above the null median `gamma`. Detection is declared if
//! any row survives all passes.
//!
//! Two deliberate calibration choices, both recorded in the docs:
//!
//! - The pass count is `floor(log2(n_rows)) + extra_passes` (default 5).
//!   With exactly `floor(log2(n_rows))` halvings the expected null survivor
//!   count lands in `[1, 2)`, i.e. a false-detection rate above 0.6 at every
//!   scale; the extra halvings put it near `n_rows / 2^K <= 1/16` while
//!   costing a vanishing slice of budget.
//! - The retained-size guard stops with "no detection" when the cumulative
//!   size of the retained sets (after the initial full pass) exceeds
//!   `2 n_rows`. Row visits are then at most `3 n_rows`, inside the
//!   `4 n_rows` that the budget `m_tilde = 4 m_bar` affords, and the guard
//!   still fires only on pathological survival patterns.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::detectors::{RowLikelihoodModel, Termination, TestOutcome};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::sensing::{History, SensingStrategy, Session, StrategySignal};

/// Default extra halvings beyond `floor(log2(n_rows))`.
pub const DEFAULT_EXTRA_PASSES: u32 = 5;

/// Default simulation count for empirical null medians.
pub const DEFAULT_GAMMA_SIMS: usize = 100_000;

/// Likelihood-ratio orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Retain rows whose data favor the alternative: score `log f1 - log f0`.
    Forward,
    /// The printed-ratio orientation `log f0 - log f1`, kept only for the
    /// regression test that documents why it cannot detect.
    Inverted,
}

/// Tuning for sequential thresholding; the defaults match the procedure
/// instantiations used by the acceptance experiments.
#[derive(Debug, Clone, Copy)]
pub struct StConfig {
    pub extra_passes: u32,
    pub gamma_sims: usize,
    pub orientation: Orientation,
}

impl Default for StConfig {
    fn default() -> Self {
        StConfig {
            extra_passes: DEFAULT_EXTRA_PASSES,
            gamma_sims: DEFAULT_GAMMA_SIMS,
            orientation: Orientation::Forward,
        }
    }
}

/// How rows are scored against `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreMode {
    /// Sum of the model's monotone sufficient statistic.
    MonotoneStat,
    /// Sum of oriented log-likelihood ratios.
    LogLr { inverted: bool },
}

/// Null median of the per-pass row score.
///
/// With a monotone sufficient statistic the median is exact (for example the
/// chi-square median in the variance-scale model); otherwise it is the
/// empirical median of the summed log-LR over `n_sims` simulated null
/// row-batches drawn from `rng`.
pub fn null_median_lr(
    model: &dyn RowLikelihoodModel,
    m_bar: u32,
    rng: &mut Stream,
    n_sims: usize,
) -> Result<f64> {
    if m_bar == 0 {
        return Err(Error::InvalidDetector("m_bar must be at least 1".into()));
    }
    if let Some(median) = model.monotone_sum_null_median(m_bar) {
        return Ok(median);
    }
    if n_sims < 1_000 {
        return Err(Error::InvalidDetector(format!(
            "empirical median needs n_sims >= 1000, got {n_sims}"
        )));
    }
    Ok(empirical_median(
        model,
        m_bar,
        rng,
        n_sims,
        Orientation::Forward,
    ))
}

fn empirical_median(
    model: &dyn RowLikelihoodModel,
    m_bar: u32,
    rng: &mut Stream,
    n_sims: usize,
    orientation: Orientation,
) -> f64 {
    let sign = match orientation {
        Orientation::Forward => 1.0,
        Orientation::Inverted => -1.0,
    };
    let mut samples: Vec<f64> = (0..n_sims)
        .map(|_| sign * model.sample_null_log_lr_sum(m_bar, rng))
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = n_sims / 2;
    if n_sims % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    }
}

type GammaKey = (u8, u64, u32, u32, bool, usize);

static GAMMA_CACHE: OnceLock<Mutex<HashMap<GammaKey, (f64, ScoreMode)>>> = OnceLock::new();

/// Calibrated `(gamma, score mode)` for a model and pass size, computed once
/// per configuration on a dedicated seeded sub-stream and cached.
pub(crate) fn calibrated_gamma(
    model: &dyn RowLikelihoodModel,
    m_bar: u32,
    orientation: Orientation,
    n_sims: usize,
) -> Result<(f64, ScoreMode)> {
    if orientation == Orientation::Forward {
        if let Some(median) = model.monotone_sum_null_median(m_bar) {
            return Ok((median, ScoreMode::MonotoneStat));
        }
    }
    let (variant, rho_bits, dim) = model.cache_key();
    let inverted = orientation == Orientation::Inverted;
    let key = (variant, rho_bits, dim, m_bar, inverted, n_sims);
    let cache = GAMMA_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().unwrap().get(&key) {
        return Ok(v);
    }
    let mut rng = stream(
        0x6a11_7a5e_ed00_0001,
        &[
            variant as u64,
            rho_bits,
            dim as u64,
            m_bar as u64,
            inverted as u64,
            n_sims as u64,
        ],
    );
    let gamma = empirical_median(model, m_bar, &mut rng, n_sims, orientation);
    let value = (gamma, ScoreMode::LogLr { inverted });
    cache.lock().unwrap().insert(key, value);
    Ok(value)
}

/// How row observations are queried through the sensing session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// One round per observation index covering every surviving row's block.
    /// Requires rows to be disjoint coordinate blocks whose within-round
    /// observations are independent across rows (true for interval blocks).
    BatchRounds,
    /// One singleton round per (row, observation). Required when distinct
    /// rows may be jointly contaminated, as for single-coordinate rows: a
    /// shared round would correlate them through the common signal.
    SingletonRounds,
}

#[derive(Debug, Clone, Copy)]
struct Finished {
    reject: bool,
    termination: Termination,
}

/// Sequential thresholding as a budget-aware sensing strategy. Drive it with
/// [`crate::sensing::run_session`], then read the decision with
/// [`SequentialThresholding::outcome`].
pub struct SequentialThresholding<'a> {
    rows: Vec<Vec<u32>>,
    model: &'a dyn RowLikelihoodModel,
    gamma: f64,
    score_mode: ScoreMode,
    m_bar: u32,
    passes: u32,
    cap: u64,
    mode: QueryMode,

    pass: u32,
    obs_in_pass: u32,
    singleton_cursor: usize,
    survivors: Vec<u32>,
    scores: Vec<f64>,
    retained_cum: u64,
    rounds_seen: usize,
    pass_survivor_counts: Vec<usize>,
    finished: Option<Finished>,
}

impl<'a> SequentialThresholding<'a> {
    /// `rows[i]` is the sorted coordinate block of row `i`; blocks must be
    /// pairwise disjoint and ascending (block `i` entirely below block
    /// `i+1`). `m_bar >= 1` observations per pass; `passes >= 1`.
    pub fn new(
        rows: Vec<Vec<u32>>,
        model: &'a dyn RowLikelihoodModel,
        m_bar: u32,
        passes: u32,
        gamma: f64,
        score_mode: ScoreMode,
        mode: QueryMode,
    ) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows < 2 {
            return Err(Error::InvalidDetector("need at least 2 rows".into()));
        }
        if m_bar == 0 || passes == 0 {
            return Err(Error::InvalidDetector(
                "m_bar and passes must be >= 1".into(),
            ));
        }
        let dim = model.dim() as usize;
        let mut prev_last = 0u32;
        for block in &rows {
            if block.len() != dim {
                return Err(Error::InvalidDetector(format!(
                    "row block has {} coordinates, model dimension is {dim}",
                    block.len()
                )));
            }
            if block.first().copied().unwrap_or(0) <= prev_last {
                return Err(Error::InvalidDetector(
                    "row blocks must be disjoint and ascending".into(),
                ));
            }
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDetector("row block must be sorted".into()));
            }
            prev_last = *block.last().unwrap();
        }
        if mode == QueryMode::SingletonRounds && dim != 1 {
            return Err(Error::InvalidDetector(
                "singleton query mode requires one-dimensional rows".into(),
            ));
        }
        Ok(SequentialThresholding {
            survivors: (0..n_rows as u32).collect(),
            scores: vec![0.0; n_rows],
            rows,
            model,
            gamma,
            score_mode,
            m_bar,
            passes,
            cap: 2 * n_rows as u64,
            mode,
            pass: 1,
            obs_in_pass: 0,
            singleton_cursor: 0,
            retained_cum: 0,
            rounds_seen: 0,
            pass_survivor_counts: Vec::new(),
            finished: None,
        })
    }

    /// Pass count for `n_rows` rows under `config`.
    pub fn pass_count(n_rows: usize, config: &StConfig) -> u32 {
        (n_rows as u32).ilog2() + config.extra_passes
    }

    fn score_obs(&self, row_obs: &[f64]) -> f64 {
        match self.score_mode {
            ScoreMode::MonotoneStat => self
                .model
                .monotone_stat(row_obs)
                .expect("score mode requires a monotone statistic"),
            ScoreMode::LogLr { inverted } => {
                let lr = self.model.log_lr(row_obs);
                if inverted {
                    -lr
                } else {
                    lr
                }
            }
        }
    }

    fn ingest(&mut self, history: &History) {
        let rounds = history.rounds();
        while self.rounds_seen < rounds.len() {
            let round = &rounds[self.rounds_seen];
            self.rounds_seen += 1;
            match self.mode {
                QueryMode::BatchRounds => {
                    let dim = self.model.dim() as usize;
                    debug_assert_eq!(round.obs.len(), dim * self.survivors.len());
                    for (slot, _row) in self.survivors.iter().enumerate() {
                        let obs = &round.obs[slot * dim..(slot + 1) * dim];
                        self.scores[slot] += self.score_obs(obs);
                    }
                    self.obs_in_pass += 1;
                    if self.obs_in_pass == self.m_bar {
                        self.finish_pass();
                    }
                }
                QueryMode::SingletonRounds => {
                    debug_assert_eq!(round.obs.len(), 1);
                    self.scores[self.singleton_cursor] += self.score_obs(&round.obs);
                    self.obs_in_pass += 1;
                    if self.obs_in_pass == self.m_bar {
                        self.obs_in_pass = 0;
                        self.singleton_cursor += 1;
                        if self.singleton_cursor == self.survivors.len() {
                            self.finish_pass();
                        }
                    }
                }
            }
        }
    }

    fn finish_pass(&mut self) {
        let retained: Vec<u32> = self
            .survivors
            .iter()
            .zip(&self.scores)
            .filter(|(_, &score)| score > self.gamma)
            .map(|(&row, _)| row)
            .collect();
        self.pass_survivor_counts.push(retained.len());
        self.retained_cum += retained.len() as u64;
        self.survivors = retained;
        self.scores = vec![0.0; self.survivors.len()];
        self.obs_in_pass = 0;
        self.singleton_cursor = 0;
        if self.retained_cum > self.cap {
            self.finished = Some(Finished {
                reject: false,
                termination: Termination::SizeStop,
            });
            return;
        }
        if self.survivors.is_empty() {
            self.finished = Some(Finished {
                reject: false,
                termination: Termination::Completed,
            });
            return;
        }
        if self.pass == self.passes {
            self.finished = Some(Finished {
                reject: true,
                termination: Termination::Completed,
            });
            return;
        }
        self.pass += 1;
    }

    fn build_query(&self) -> Vec<u32> {
        match self.mode {
            QueryMode::BatchRounds => {
                let dim = self.model.dim() as usize;
                let mut query = Vec::with_capacity(self.survivors.len() * dim);
                for &row in &self.survivors {
                    query.extend_from_slice(&self.rows[row as usize]);
                }
                query
            }
            QueryMode::SingletonRounds => {
                self.rows[self.survivors[self.singleton_cursor] as usize].clone()
            }
        }
    }

    /// Survivor counts recorded at the end of each completed pass.
    pub fn pass_survivor_counts(&self) -> &[usize] {
        &self.pass_survivor_counts
    }

    /// Final decision; call after the session has been driven to completion.
    pub fn outcome(&self, session: &Session) -> TestOutcome {
        let finished = self.finished.unwrap_or(Finished {
            reject: false,
            termination: Termination::BudgetStop,
        });
        let survivors = if finished.termination == Termination::Completed && finished.reject {
            self.survivors.len() as f64
        } else {
            0.0
        };
        TestOutcome {
            reject: finished.reject,
            statistic: Some(survivors),
            threshold: Some(0.0),
            rounds_used: session.history.len() as u64,
            coordinate_cost: session.budget.consumed(),
            termination: finished.termination,
            approximate: false,
        }
    }
}

impl SensingStrategy for SequentialThresholding<'_> {
    fn next_query(&mut self, history: &History, _rng: &mut Stream) -> StrategySignal {
        self.ingest(history);
        if self.finished.is_some() {
            return StrategySignal::Done;
        }
        StrategySignal::Query(self.build_query())
    }

    fn budget_refused(&mut self) {
        self.finished = Some(Finished {
            reject: false,
            termination: Termination::BudgetStop,
        });
    }

    fn is_adaptive(&self) -> bool {
        true
    }
}
