//! Concrete detection procedures wired to sensing strategies.
//!
//! Each procedure knows its budget `M = m n`, validates the instance family
//! it can run against, declares whether it treats all alternatives in the
//! class identically (exchangeability, used by the risk engine to reduce the
//! worst case to one canonical alternative), and runs one trial end to end
//! through a budgeted sensing session.

use rand::Rng;

use crate::detectors::scan::{
    localized_scan_statistic, samples_from_history, scan_threshold, simple_sum_test, Calibration,
};
use crate::detectors::st::{
    calibrated_gamma, QueryMode, ScoreMode, SequentialThresholding, StConfig,
};
use crate::detectors::{EquicorrRowModel, Termination, TestOutcome, VarianceScaleModel};
use crate::error::{Error, Result};
use crate::model::{class_size, ContaminationClass, ModelKind, ProblemInstance};
use crate::risk::{InstanceFamily, Procedure};
use crate::rng::{stream, Stream};
use crate::sensing::{draw_without_replacement, run_session, Budget, History, UniformStrategy};

/// Splits a trial stream into (strategy-internal, observation) sub-streams.
fn split_streams(rng: &mut Stream) -> (Stream, Stream) {
    let internal = rng.gen::<u64>();
    let observation = rng.gen::<u64>();
    (stream(internal, &[]), stream(observation, &[]))
}

fn check_family(
    expected_class: &ContaminationClass,
    expected_rho: f64,
    family: &InstanceFamily,
) -> Result<()> {
    if family.class != *expected_class {
        return Err(Error::InvalidRiskConfig(format!(
            "procedure built for {:?}, family has {:?}",
            expected_class, family.class
        )));
    }
    if (family.rho - expected_rho).abs() > 1e-12 {
        return Err(Error::InvalidRiskConfig(format!(
            "procedure built for rho = {expected_rho}, family has rho = {}",
            family.rho
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Uniform sensing + localized scan test
// ---------------------------------------------------------------------------

/// Uniform sensing (`m` full-vector samples) followed by the localized
/// squared-sum test over the class, with the threshold resolved once at
/// construction.
#[derive(Debug, Clone)]
pub struct UniformScan {
    class: ContaminationClass,
    m: u32,
    rho: f64,
    threshold: f64,
}

impl UniformScan {
    pub fn new(
        class: ContaminationClass,
        rho: f64,
        m: u32,
        calibration: Calibration,
    ) -> Result<Self> {
        class.validate()?;
        if m == 0 {
            return Err(Error::InvalidDetector("need m >= 1 samples".into()));
        }
        if matches!(class, ContaminationClass::Rectangles { .. }) {
            return Err(Error::InvalidDetector(
                "scan over rectangles reduces to interval tilings".into(),
            ));
        }
        let threshold = scan_threshold(&class, m, calibration)?;
        Ok(UniformScan {
            class,
            m,
            rho,
            threshold,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        let (_, mut obs_rng) = split_streams(rng);
        let mut strategy = UniformStrategy::new(self.class.n(), self.m)?;
        let session = run_session(&mut strategy, instance, self.budget(), &mut obs_rng)?;
        let samples = samples_from_history(&session.history)?;
        let stat = localized_scan_statistic(&samples, &self.class)?;
        let outcome = TestOutcome {
            reject: stat.value > self.threshold,
            statistic: Some(stat.value),
            threshold: Some(self.threshold),
            rounds_used: session.history.len() as u64,
            coordinate_cost: session.budget.consumed(),
            termination: Termination::Completed,
            approximate: !stat.exact,
        };
        Ok((outcome, session.history))
    }
}

impl Procedure for UniformScan {
    fn name(&self) -> &'static str {
        "uniform_scan"
    }

    fn budget(&self) -> Budget {
        Budget::new(self.m as u64 * self.class.n() as u64)
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        check_family(&self.class, self.rho, family)
    }

    fn is_exchangeable(&self, class: &ContaminationClass) -> bool {
        // Disjoint tilings and k-sets are fully symmetric under uniform
        // sensing; sliding intervals lose symmetry at the boundary.
        matches!(
            class,
            ContaminationClass::DisjointKIntervals { .. } | ContaminationClass::KSets { .. }
        )
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Uniform sensing + simple squared-sum test
// ---------------------------------------------------------------------------

/// Uniform sensing followed by the non-localized squared-sum test; the null
/// law of `T_s / n` is exactly chi-square with `m` degrees of freedom.
#[derive(Debug, Clone)]
pub struct SimpleSum {
    class: ContaminationClass,
    rho: f64,
    m: u32,
    alpha: f64,
}

impl SimpleSum {
    pub fn new(class: ContaminationClass, rho: f64, m: u32, alpha: f64) -> Result<Self> {
        class.validate()?;
        if m == 0 {
            return Err(Error::InvalidDetector("need m >= 1 samples".into()));
        }
        if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
            return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
        }
        Ok(SimpleSum {
            class,
            rho,
            m,
            alpha,
        })
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        let (_, mut obs_rng) = split_streams(rng);
        let mut strategy = UniformStrategy::new(self.class.n(), self.m)?;
        let session = run_session(&mut strategy, instance, self.budget(), &mut obs_rng)?;
        let samples = samples_from_history(&session.history)?;
        Ok((simple_sum_test(&samples, self.alpha)?, session.history))
    }
}

impl Procedure for SimpleSum {
    fn name(&self) -> &'static str {
        "simple_sum"
    }

    fn budget(&self) -> Budget {
        Budget::new(self.m as u64 * self.class.n() as u64)
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        check_family(&self.class, self.rho, family)
    }

    fn is_exchangeable(&self, _class: &ContaminationClass) -> bool {
        // The statistic never looks at where the contamination sits.
        true
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Sequential thresholding for disjoint k-intervals
// ---------------------------------------------------------------------------

/// Sequential thresholding over the disjoint k-interval tiling: rows are the
/// `floor(n/k)` blocks, the row model is the k-dimensional equicorrelated
/// Gaussian against the standard normal, and row observations are fresh
/// sensing rounds on the block. Trailing coordinates beyond the tiling are
/// never queried.
pub struct StDisjointIntervals {
    class: ContaminationClass,
    n: u32,
    k: u32,
    m: u32,
    rho: f64,
    model_kind: ModelKind,
    row_model: EquicorrRowModel,
    gamma: f64,
    score_mode: ScoreMode,
    m_bar: u32,
    passes: u32,
}

impl StDisjointIntervals {
    pub fn new(
        class: ContaminationClass,
        rho: f64,
        m: u32,
        model_kind: ModelKind,
        config: StConfig,
    ) -> Result<Self> {
        let (n, k) = match class {
            ContaminationClass::DisjointKIntervals { n, k } => (n, k),
            other => {
                return Err(Error::InvalidDetector(format!(
                    "sequential thresholding for intervals needs the disjoint tiling class, got {other:?}"
                )))
            }
        };
        class.validate()?;
        let n_rows = n / k;
        if n_rows < 2 {
            return Err(Error::InvalidDetector(
                "need at least 2 disjoint intervals".into(),
            ));
        }
        let m_bar = m / 4;
        if m_bar == 0 {
            return Err(Error::InvalidDetector(format!(
                "m = {m} leaves no observations per pass (m_bar = floor(m/4) must be >= 1)"
            )));
        }
        let row_model = EquicorrRowModel::new(rho, k, model_kind)?;
        let (gamma, score_mode) =
            calibrated_gamma(&row_model, m_bar, config.orientation, config.gamma_sims)?;
        let passes = SequentialThresholding::pass_count(n_rows as usize, &config);
        Ok(StDisjointIntervals {
            class,
            n,
            k,
            m,
            rho,
            model_kind,
            row_model,
            gamma,
            score_mode,
            m_bar,
            passes,
        })
    }

    fn rows(&self) -> Vec<Vec<u32>> {
        let n_rows = self.n / self.k;
        (0..n_rows)
            .map(|j| {
                let start = j * self.k + 1;
                (start..start + self.k).collect()
            })
            .collect()
    }

    /// Calibrated retention threshold (null median of the row score).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Observations per surviving row per pass.
    pub fn m_bar(&self) -> u32 {
        self.m_bar
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        let (_, mut obs_rng) = split_streams(rng);
        let mut st = SequentialThresholding::new(
            self.rows(),
            &self.row_model,
            self.m_bar,
            self.passes,
            self.gamma,
            self.score_mode,
            QueryMode::BatchRounds,
        )?;
        let session = run_session(&mut st, instance, self.budget(), &mut obs_rng)?;
        let outcome = st.outcome(&session);
        Ok((outcome, session.history))
    }
}

impl Procedure for StDisjointIntervals {
    fn name(&self) -> &'static str {
        "st_disjoint"
    }

    fn budget(&self) -> Budget {
        Budget::new(self.m as u64 * self.n as u64)
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        check_family(&self.class, self.rho, family)?;
        if family.model != self.model_kind {
            return Err(Error::ModelMismatch(format!(
                "procedure calibrated for {:?}, family is {:?}",
                self.model_kind, family.model
            )));
        }
        Ok(())
    }

    fn is_exchangeable(&self, class: &ContaminationClass) -> bool {
        matches!(class, ContaminationClass::DisjointKIntervals { .. })
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Modified sequential thresholding (p-truncated intervals)
// ---------------------------------------------------------------------------

/// Modified sequential thresholding: when `rho k > 1`, each interval is
/// truncated to its first `p = min(k, ceil(1/rho))` coordinates, trading
/// per-row information for `m_tilde = floor(m k / p)` measurement rounds;
/// when `rho k <= 1` the procedure is identical to plain interval ST.
pub enum ModifiedStDisjointIntervals {
    Plain(StDisjointIntervals),
    Truncated {
        class: ContaminationClass,
        n: u32,
        k: u32,
        m: u32,
        rho: f64,
        model_kind: ModelKind,
        p: u32,
        row_model: EquicorrRowModel,
        gamma: f64,
        score_mode: ScoreMode,
        m_bar: u32,
        passes: u32,
    },
}

impl ModifiedStDisjointIntervals {
    pub fn new(
        class: ContaminationClass,
        rho: f64,
        m: u32,
        model_kind: ModelKind,
        config: StConfig,
    ) -> Result<Self> {
        let (n, k) = match class {
            ContaminationClass::DisjointKIntervals { n, k } => (n, k),
            other => {
                return Err(Error::InvalidDetector(format!(
                    "modified ST needs the disjoint tiling class, got {other:?}"
                )))
            }
        };
        if rho <= 0.0 {
            return Err(Error::InvalidRho("modified ST needs rho > 0".into()));
        }
        if rho * k as f64 <= 1.0 {
            return Ok(ModifiedStDisjointIntervals::Plain(
                StDisjointIntervals::new(class, rho, m, model_kind, config)?,
            ));
        }
        let p = ((1.0 / rho).ceil() as u32).min(k).max(2);
        let n_rows = n / k;
        if n_rows < 2 {
            return Err(Error::InvalidDetector(
                "need at least 2 disjoint intervals".into(),
            ));
        }
        let m_tilde = (m as u64 * k as u64 / p as u64) as u32;
        let m_bar = m_tilde / 4;
        if m_bar == 0 {
            return Err(Error::InvalidDetector(format!(
                "m = {m} leaves no observations per pass after truncation (m_tilde = {m_tilde})"
            )));
        }
        let row_model = EquicorrRowModel::new(rho, p, model_kind)?;
        let (gamma, score_mode) =
            calibrated_gamma(&row_model, m_bar, config.orientation, config.gamma_sims)?;
        let passes = SequentialThresholding::pass_count(n_rows as usize, &config);
        Ok(ModifiedStDisjointIntervals::Truncated {
            class,
            n,
            k,
            m,
            rho,
            model_kind,
            p,
            row_model,
            gamma,
            score_mode,
            m_bar,
            passes,
        })
    }

    /// The truncation width in effect (`k` when running the plain branch).
    pub fn effective_p(&self) -> u32 {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.k,
            ModifiedStDisjointIntervals::Truncated { p, .. } => *p,
        }
    }

    /// Calibrated retention threshold.
    pub fn gamma(&self) -> f64 {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.gamma(),
            ModifiedStDisjointIntervals::Truncated { gamma, .. } => *gamma,
        }
    }

    /// Observations per surviving row per pass.
    pub fn m_bar(&self) -> u32 {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.m_bar(),
            ModifiedStDisjointIntervals::Truncated { m_bar, .. } => *m_bar,
        }
    }

    pub fn passes(&self) -> u32 {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.passes(),
            ModifiedStDisjointIntervals::Truncated { passes, .. } => *passes,
        }
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.run_traced(instance, rng),
            ModifiedStDisjointIntervals::Truncated {
                n,
                k,
                p,
                row_model,
                gamma,
                score_mode,
                m_bar,
                passes,
                ..
            } => {
                let (_, mut obs_rng) = split_streams(rng);
                let n_rows = n / k;
                let rows: Vec<Vec<u32>> = (0..n_rows)
                    .map(|j| {
                        let start = j * k + 1;
                        (start..start + p).collect()
                    })
                    .collect();
                let mut st = SequentialThresholding::new(
                    rows,
                    row_model,
                    *m_bar,
                    *passes,
                    *gamma,
                    *score_mode,
                    QueryMode::BatchRounds,
                )?;
                let session = run_session(&mut st, instance, self.budget(), &mut obs_rng)?;
                let outcome = st.outcome(&session);
                Ok((outcome, session.history))
            }
        }
    }
}

impl Procedure for ModifiedStDisjointIntervals {
    fn name(&self) -> &'static str {
        "modified_st"
    }

    fn budget(&self) -> Budget {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.budget(),
            ModifiedStDisjointIntervals::Truncated { n, m, .. } => {
                Budget::new(*m as u64 * *n as u64)
            }
        }
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        match self {
            ModifiedStDisjointIntervals::Plain(inner) => inner.validate_family(family),
            ModifiedStDisjointIntervals::Truncated {
                class,
                rho,
                model_kind,
                ..
            } => {
                check_family(class, *rho, family)?;
                if family.model != *model_kind {
                    return Err(Error::ModelMismatch(format!(
                        "procedure calibrated for {:?}, family is {:?}",
                        model_kind, family.model
                    )));
                }
                Ok(())
            }
        }
    }

    fn is_exchangeable(&self, class: &ContaminationClass) -> bool {
        matches!(class, ContaminationClass::DisjointKIntervals { .. })
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Randomized subsampling test for k-sets
// ---------------------------------------------------------------------------

/// Randomized k-set procedure: draw `B` of `floor(2np/k)` coordinates without
/// replacement, measure it `floor(mk/(2p))` times, and run the localized
/// squared-sum test over `floor(p)`-subsets of `B`. The randomization makes
/// the procedure exchangeable over k-sets, so the risk engine can evaluate a
/// single canonical alternative.
#[derive(Debug, Clone)]
pub struct RandomizedKsets {
    class: ContaminationClass,
    n: u32,
    k: u32,
    m: u32,
    rho: f64,
    p: f64,
    subsample_size: u32,
    rounds: u32,
    scan_class: ContaminationClass,
    threshold: f64,
}

impl RandomizedKsets {
    pub fn new(
        class: ContaminationClass,
        rho: f64,
        m: u32,
        p: f64,
        alpha: f64,
        n_sims: usize,
        calibration_seed: u64,
    ) -> Result<Self> {
        let (n, k) = match class {
            ContaminationClass::KSets { n, k } => (n, k),
            other => {
                return Err(Error::InvalidDetector(format!(
                    "randomized subsampling test targets k-sets, got {other:?}"
                )))
            }
        };
        class.validate()?;
        if !(2.0..=k as f64).contains(&p) {
            return Err(Error::InvalidDetector(format!(
                "p = {p} outside [2, k = {k}]"
            )));
        }
        let subsample_size = ((2.0 * n as f64 * p) / k as f64).floor() as u64;
        if subsample_size > n as u64 {
            return Err(Error::InvalidDetector(format!(
                "subsample size {subsample_size} exceeds n = {n}"
            )));
        }
        let p_floor = p.floor() as u32;
        if (subsample_size as u32) < p_floor {
            return Err(Error::InvalidDetector(
                "subsample smaller than the scanned set size".into(),
            ));
        }
        let rounds = ((m as f64 * k as f64) / (2.0 * p)).floor() as u32;
        if rounds == 0 {
            return Err(Error::InvalidDetector(
                "budget leaves no rounds on the subsample".into(),
            ));
        }
        let scan_class = ContaminationClass::KSets {
            n: subsample_size as u32,
            k: p_floor,
        };
        // The null law over B is iid standard normal whatever B is, so one
        // threshold serves every draw of the subsample.
        let threshold = scan_threshold(
            &scan_class,
            rounds,
            Calibration::MonteCarloNull {
                alpha,
                n_sims,
                seed: calibration_seed,
            },
        )?;
        Ok(RandomizedKsets {
            class,
            n,
            k,
            m,
            rho,
            p,
            subsample_size: subsample_size as u32,
            rounds,
            scan_class,
            threshold,
        })
    }

    pub fn subsample_size(&self) -> u32 {
        self.subsample_size
    }

    /// Rounds of measurement on the subsample, `floor(mk/(2p))`.
    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Whether the scan over `floor(p)`-subsets of the subsample enumerates
    /// exactly (otherwise outcomes are flagged approximate).
    pub fn scan_is_exact(&self) -> bool {
        class_size(&self.scan_class)
            .map(|s| s <= crate::detectors::scan::KSET_ENUMERATION_CAP)
            .unwrap_or(false)
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        let (mut internal, mut obs_rng) = split_streams(rng);
        let mut strategy = crate::sensing::RandomizedSubsampleStrategy::new(
            self.n,
            self.k,
            self.p,
            self.m,
            &mut internal,
        )?;
        let session = run_session(&mut strategy, instance, self.budget(), &mut obs_rng)?;
        let samples = samples_from_history(&session.history)?;
        let stat = localized_scan_statistic(&samples, &self.scan_class)?;
        let outcome = TestOutcome {
            reject: stat.value > self.threshold,
            statistic: Some(stat.value),
            threshold: Some(self.threshold),
            rounds_used: session.history.len() as u64,
            coordinate_cost: session.budget.consumed(),
            termination: Termination::Completed,
            approximate: !stat.exact,
        };
        Ok((outcome, session.history))
    }
}

impl Procedure for RandomizedKsets {
    fn name(&self) -> &'static str {
        "randomized_ksets"
    }

    fn budget(&self) -> Budget {
        Budget::new(self.m as u64 * self.n as u64)
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        check_family(&self.class, self.rho, family)
    }

    fn is_exchangeable(&self, class: &ContaminationClass) -> bool {
        matches!(class, ContaminationClass::KSets { .. })
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Variance thresholding (unnormalized model)
// ---------------------------------------------------------------------------

/// Variance thresholding: randomized coordinate subsampling with
/// `p = max(2, ceil(log log2 n))`, then sequential thresholding over the
/// surviving single coordinates with the `chi^2_1` versus `(1+rho) chi^2_1`
/// scale model on squared values. Observations are singleton rounds, which
/// guarantees independent samples per coordinate. Requires the unnormalized
/// model: normalized contaminated marginals have unit variance, so squared
/// single-coordinate values carry no signal.
pub struct VarianceThresholding {
    class: ContaminationClass,
    n: u32,
    m: u32,
    rho: f64,
    subsample_size: u32,
    row_model: VarianceScaleModel,
    gamma: f64,
    score_mode: ScoreMode,
    m_bar: u32,
    passes: u32,
}

impl VarianceThresholding {
    pub fn new(class: ContaminationClass, rho: f64, m: u32, config: StConfig) -> Result<Self> {
        let (n, k) = match class {
            ContaminationClass::KSets { n, k } => (n, k),
            other => {
                return Err(Error::InvalidDetector(format!(
                    "variance thresholding targets k-sets, got {other:?}"
                )))
            }
        };
        class.validate()?;
        if rho <= 0.0 {
            return Err(Error::InvalidRho(
                "variance thresholding needs rho > 0".into(),
            ));
        }
        // p = log log2 n falls below 2 at desk scale; clamp.
        let p = ((n as f64).log2().ln().ceil().max(2.0)) as u32;
        let subsample_size = ((2.0 * n as f64 * p as f64) / k as f64).floor() as u64;
        if subsample_size > n as u64 {
            return Err(Error::InvalidDetector(format!(
                "subsample size {subsample_size} exceeds n = {n}"
            )));
        }
        if subsample_size < 2 {
            return Err(Error::InvalidDetector(
                "subsample too small to threshold".into(),
            ));
        }
        let m_tilde = ((m as f64 * k as f64) / (2.0 * p as f64)).floor() as u32;
        let m_bar = m_tilde / 4;
        if m_bar == 0 {
            return Err(Error::InvalidDetector(format!(
                "m = {m} leaves no observations per pass (m_tilde = {m_tilde})"
            )));
        }
        let row_model = VarianceScaleModel::new(rho)?;
        let (gamma, score_mode) =
            calibrated_gamma(&row_model, m_bar, config.orientation, config.gamma_sims)?;
        let passes = SequentialThresholding::pass_count(subsample_size as usize, &config);
        Ok(VarianceThresholding {
            class,
            n,
            m,
            rho,
            subsample_size: subsample_size as u32,
            row_model,
            gamma,
            score_mode,
            m_bar,
            passes,
        })
    }

    pub fn subsample_size(&self) -> u32 {
        self.subsample_size
    }

    /// Calibrated retention threshold (chi-square median in stat units).
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn m_bar(&self) -> u32 {
        self.m_bar
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    pub fn run(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        Ok(self.run_traced(instance, rng)?.0)
    }

    pub fn run_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, History)> {
        if instance.model() != ModelKind::Unnormalized {
            return Err(Error::ModelMismatch(
                "variance thresholding requires the unnormalized model".into(),
            ));
        }
        let (mut internal, mut obs_rng) = split_streams(rng);
        let subsample = draw_without_replacement(self.n, self.subsample_size, &mut internal);
        let rows: Vec<Vec<u32>> = subsample.iter().map(|&c| vec![c]).collect();
        let mut st = SequentialThresholding::new(
            rows,
            &self.row_model,
            self.m_bar,
            self.passes,
            self.gamma,
            self.score_mode,
            QueryMode::SingletonRounds,
        )?;
        let session = run_session(&mut st, instance, self.budget(), &mut obs_rng)?;
        let outcome = st.outcome(&session);
        Ok((outcome, session.history))
    }
}

impl Procedure for VarianceThresholding {
    fn name(&self) -> &'static str {
        "variance_thresholding"
    }

    fn budget(&self) -> Budget {
        Budget::new(self.m as u64 * self.n as u64)
    }

    fn validate_family(&self, family: &InstanceFamily) -> Result<()> {
        check_family(&self.class, self.rho, family)?;
        if family.model != ModelKind::Unnormalized {
            return Err(Error::ModelMismatch(
                "variance thresholding requires the unnormalized model".into(),
            ));
        }
        Ok(())
    }

    fn is_exchangeable(&self, class: &ContaminationClass) -> bool {
        matches!(class, ContaminationClass::KSets { .. })
    }

    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome> {
        self.run(instance, rng)
    }

    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        let (outcome, history) = self.run_traced(instance, rng)?;
        Ok((outcome, Some(history)))
    }
}

// ---------------------------------------------------------------------------
// Free-function entry points
// ---------------------------------------------------------------------------

/// One sequential-thresholding trial on a disjoint-interval instance.
pub fn st_disjoint_intervals(
    instance: &ProblemInstance,
    m: u32,
    config: StConfig,
    rng: &mut Stream,
) -> Result<TestOutcome> {
    StDisjointIntervals::new(
        *instance.class(),
        instance.rho(),
        m,
        instance.model(),
        config,
    )?
    .run(instance, rng)
}

/// One modified-sequential-thresholding trial.
pub fn modified_st_disjoint_intervals(
    instance: &ProblemInstance,
    m: u32,
    config: StConfig,
    rng: &mut Stream,
) -> Result<TestOutcome> {
    ModifiedStDisjointIntervals::new(
        *instance.class(),
        instance.rho(),
        m,
        instance.model(),
        config,
    )?
    .run(instance, rng)
}

/// One randomized-subsampling trial on a k-set instance.
pub fn randomized_ksets_test(
    instance: &ProblemInstance,
    m: u32,
    p: f64,
    alpha: f64,
    n_sims: usize,
    calibration_seed: u64,
    rng: &mut Stream,
) -> Result<TestOutcome> {
    RandomizedKsets::new(
        *instance.class(),
        instance.rho(),
        m,
        p,
        alpha,
        n_sims,
        calibration_seed,
    )?
    .run(instance, rng)
}

/// One variance-thresholding trial on an unnormalized k-set instance.
pub fn variance_thresholding(
    instance: &ProblemInstance,
    m: u32,
    config: StConfig,
    rng: &mut Stream,
) -> Result<TestOutcome> {
    VarianceThresholding::new(*instance.class(), instance.rho(), m, config)?.run(instance, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Truth;
    use crate::rng::stream;

    #[test]
    fn variance_thresholding_rejects_normalized_model() {
        let class = ContaminationClass::KSets { n: 256, k: 16 };
        let inst = ProblemInstance::new(class, 0.5, ModelKind::Normalized, Truth::Null).unwrap();
        let mut rng = stream(51, &[]);
        let out = variance_thresholding(&inst, 16, StConfig::default(), &mut rng);
        assert!(matches!(out, Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn modified_st_delegates_below_rho_k_one() {
        let class = ContaminationClass::DisjointKIntervals { n: 256, k: 8 };
        // rho k = 0.8 <= 1: identical decisions to plain ST on shared seeds.
        let rho = 0.1;
        let cfg = StConfig {
            gamma_sims: 20_000,
            ..StConfig::default()
        };
        let modified =
            ModifiedStDisjointIntervals::new(class, rho, 16, ModelKind::Normalized, cfg).unwrap();
        assert_eq!(modified.effective_p(), 8);
        let plain = StDisjointIntervals::new(class, rho, 16, ModelKind::Normalized, cfg).unwrap();
        let inst = ProblemInstance::new(
            class,
            rho,
            ModelKind::Normalized,
            Truth::Alternative(vec![9, 10, 11, 12, 13, 14, 15, 16]),
        )
        .unwrap();
        for t in 0..32u64 {
            let mut r1 = stream(52, &[t]);
            let mut r2 = stream(52, &[t]);
            let o1 = modified.run(&inst, &mut r1).unwrap();
            let o2 = plain.run(&inst, &mut r2).unwrap();
            assert_eq!(o1.reject, o2.reject);
            assert_eq!(o1.rounds_used, o2.rounds_used);
            assert_eq!(o1.coordinate_cost, o2.coordinate_cost);
        }
    }

    #[test]
    fn modified_st_truncates_above_rho_k_one() {
        let class = ContaminationClass::DisjointKIntervals { n: 4096, k: 64 };
        let modified = ModifiedStDisjointIntervals::new(
            class,
            0.5,
            8,
            ModelKind::Normalized,
            StConfig {
                gamma_sims: 5_000,
                ..StConfig::default()
            },
        )
        .unwrap();
        // p = ceil(1/0.5) = 2: measurement multiplier k/p = 32.
        assert_eq!(modified.effective_p(), 2);
    }

    #[test]
    fn randomized_ksets_shapes() {
        let class = ContaminationClass::KSets { n: 400, k: 40 };
        let proc = RandomizedKsets::new(class, 0.2, 8, 2.0, 0.05, 1_000, 53).unwrap();
        // |B| = floor(2*400*2/40) = 40 and C(40, 2) = 780: exact scan.
        assert_eq!(proc.subsample_size(), 40);
        assert!(proc.scan_is_exact());
        let inst = ProblemInstance::new(class, 0.2, ModelKind::Normalized, Truth::Null).unwrap();
        let mut rng = stream(54, &[]);
        let out = proc.run(&inst, &mut rng).unwrap();
        assert!(!out.approximate);
        assert!(out.coordinate_cost <= 8 * 400);
    }

    #[test]
    fn uniform_scan_runs_within_budget() {
        let class = ContaminationClass::DisjointKIntervals { n: 64, k: 8 };
        let proc = UniformScan::new(
            class,
            0.3,
            4,
            Calibration::MonteCarloNull {
                alpha: 0.05,
                n_sims: 1_000,
                seed: 55,
            },
        )
        .unwrap();
        let inst = ProblemInstance::new(class, 0.3, ModelKind::Normalized, Truth::Null).unwrap();
        let mut rng = stream(56, &[]);
        let out = proc.run(&inst, &mut rng).unwrap();
        assert_eq!(out.coordinate_cost, 4 * 64);
        assert_eq!(out.rounds_used, 4);
    }
}
