//! Monte Carlo estimation of the worst-case risk
//! `R = P_null(reject) + max_S P_S(accept)`.
//!
//! Trials are reproducible and embarrassingly parallel: trial `(hypothesis,
//! alternative index, trial index)` draws its stream from the master seed and
//! those coordinates alone, and aggregation folds results in trial-index
//! order, so serial and parallel execution produce bit-identical estimates.

use serde::Serialize;

use crate::detectors::TestOutcome;
use crate::error::{Error, Result};
use crate::exec::{run_indexed, Parallelism};
use crate::model::{
    class_size, member, sample_member, ContaminationClass, ModelKind, ProblemInstance, Truth,
};
use crate::rng::{stream, tag, Stream};
use crate::sensing::{Budget, History};

/// The family of instances a procedure is evaluated against: one class,
/// correlation and model kind, with the truth varying per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFamily {
    pub class: ContaminationClass,
    pub rho: f64,
    pub model: ModelKind,
}

impl InstanceFamily {
    pub fn null_instance(&self) -> Result<ProblemInstance> {
        ProblemInstance::new(self.class, self.rho, self.model, Truth::Null)
    }

    pub fn alternative_instance(&self, s: Vec<u32>) -> Result<ProblemInstance> {
        ProblemInstance::new(self.class, self.rho, self.model, Truth::Alternative(s))
    }
}

/// A detection procedure as seen by the risk engine: budgeted, family-aware
/// and shareable across trial workers.
pub trait Procedure: Sync {
    fn name(&self) -> &str;

    /// Fresh budget for one trial (`M = m n` coordinate-measurements).
    fn budget(&self) -> Budget;

    /// Checks the procedure was built for this family (class, rho, model).
    fn validate_family(&self, family: &InstanceFamily) -> Result<()>;

    /// Whether the procedure treats every alternative in the class
    /// identically, allowing the worst case to collapse to one canonical
    /// member.
    fn is_exchangeable(&self, class: &ContaminationClass) -> bool;

    /// Runs one trial against the instance using the trial's stream.
    fn run_trial(&self, instance: &ProblemInstance, rng: &mut Stream) -> Result<TestOutcome>;

    /// Like [`Procedure::run_trial`], additionally returning the session
    /// trace when the procedure exposes one (used by replay tooling).
    fn run_trial_traced(
        &self,
        instance: &ProblemInstance,
        rng: &mut Stream,
    ) -> Result<(TestOutcome, Option<History>)> {
        Ok((self.run_trial(instance, rng)?, None))
    }
}

/// One trial's outcome with its coordinates in the trial grid.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub hypothesis: &'static str,
    pub s_index: usize,
    pub trial: usize,
    #[serde(flatten)]
    pub outcome: TestOutcome,
}

/// How alternatives are chosen for the worst-case maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlternativeSelection {
    /// The canonical member only (exact when the procedure is exchangeable).
    Canonical,
    /// `count` distinct members sampled uniformly, always including the
    /// canonical member. The evaluated worst case can only understate the
    /// true maximum.
    Sampled(u32),
}

/// Alternatives to evaluate: the canonical member for exchangeable
/// procedures, otherwise sampled members including the canonical one.
pub fn alternatives_for(
    class: &ContaminationClass,
    exchangeable: bool,
    selection: AlternativeSelection,
    rng: &mut Stream,
) -> Result<Vec<Vec<u32>>> {
    let canonical = member(class, 0)?;
    if exchangeable {
        return Ok(vec![canonical]);
    }
    match selection {
        AlternativeSelection::Canonical => Ok(vec![canonical]),
        AlternativeSelection::Sampled(count) => {
            if count == 0 {
                return Err(Error::InvalidRiskConfig(
                    "alternative count must be >= 1".into(),
                ));
            }
            let size = match class_size(class) {
                Ok(size) => size,
                Err(Error::ClassTooLarge) => u64::MAX,
                Err(e) => return Err(e),
            };
            let target = (count as u64).min(size) as usize;
            let mut chosen = vec![canonical.clone()];
            let mut seen = std::collections::BTreeSet::new();
            seen.insert(canonical);
            if size <= count as u64 * 4 && size != u64::MAX {
                // Small classes: enumerate and take the first `target`.
                for index in 0..size {
                    if chosen.len() == target {
                        break;
                    }
                    let s = member(class, index)?;
                    if seen.insert(s.clone()) {
                        chosen.push(s);
                    }
                }
            } else {
                while chosen.len() < target {
                    let s = sample_member(class, rng)?;
                    if seen.insert(s.clone()) {
                        chosen.push(s);
                    }
                }
            }
            Ok(chosen)
        }
    }
}

/// Two-sided Hoeffding confidence half-width `sqrt(log(2/delta) / (2 N))`,
/// clipped to the reporting bound 1.
pub fn hoeffding_ci(n: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidRiskConfig("trial count must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(Error::InvalidRiskConfig(format!(
            "delta = {delta} outside (0, 1)"
        )));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt().min(1.0))
}

/// Estimated worst-case risk with per-component Hoeffding half-width.
#[derive(Debug, Clone, Serialize)]
pub struct RiskEstimate {
    pub type1_rate: f64,
    pub type2_worst_rate: f64,
    /// `type1_rate + type2_worst_rate`, in `[0, 2]`.
    pub risk: f64,
    pub ci_halfwidth: f64,
    pub trials_null: usize,
    pub trials_alt: usize,
    pub alternatives_evaluated: usize,
    /// Per-alternative type-II rates, in evaluation order.
    pub per_alternative_type2: Vec<f64>,
}

/// Risk-estimation configuration.
#[derive(Debug, Clone, Copy)]
pub struct RiskConfig {
    /// Trials per hypothesis (and per evaluated alternative). At least 100.
    pub trials: usize,
    pub alternatives: AlternativeSelection,
    /// Confidence parameter for the Hoeffding half-width.
    pub delta: f64,
    pub master_seed: u64,
    pub parallelism: Parallelism,
}

impl RiskConfig {
    pub fn new(trials: usize, master_seed: u64) -> Self {
        RiskConfig {
            trials,
            alternatives: AlternativeSelection::Sampled(8),
            delta: 0.05,
            master_seed,
            parallelism: Parallelism::default(),
        }
    }
}

/// Runs `trials` null trials and `trials` trials per evaluated alternative;
/// the worst-case type-II rate is the maximum over alternatives.
pub fn estimate_risk(
    procedure: &dyn Procedure,
    family: &InstanceFamily,
    config: &RiskConfig,
) -> Result<RiskEstimate> {
    Ok(estimate_risk_with_trials(procedure, family, config)?.0)
}

/// [`estimate_risk`] additionally returning every trial's outcome, in the
/// deterministic job order (null trials, then each alternative's trials).
pub fn estimate_risk_with_trials(
    procedure: &dyn Procedure,
    family: &InstanceFamily,
    config: &RiskConfig,
) -> Result<(RiskEstimate, Vec<TrialRecord>)> {
    if config.trials < 100 {
        return Err(Error::InvalidRiskConfig(format!(
            "need at least 100 trials per hypothesis, got {}",
            config.trials
        )));
    }
    procedure.validate_family(family)?;
    let mut alt_rng = stream(config.master_seed, &[tag::ALTERNATIVES]);
    let alternatives = alternatives_for(
        &family.class,
        procedure.is_exchangeable(&family.class),
        config.alternatives,
        &mut alt_rng,
    )?;

    let n = config.trials;
    let null_instance = family.null_instance()?;
    let alt_instances: Vec<ProblemInstance> = alternatives
        .iter()
        .map(|s| family.alternative_instance(s.clone()))
        .collect::<Result<_>>()?;

    // Job layout: [null trials] ++ [alt 0 trials] ++ [alt 1 trials] ++ ...
    let total_jobs = n * (1 + alt_instances.len());
    let master = config.master_seed;
    let budget_total = procedure.budget().total();
    let results: Vec<Result<TrialRecord>> = run_indexed(total_jobs, config.parallelism, |job| {
        let (instance, hypothesis, hyp_tag, s_idx, trial) = if job < n {
            (&null_instance, "null", tag::NULL, 0usize, job)
        } else {
            let alt_job = job - n;
            let s_idx = alt_job / n;
            (&alt_instances[s_idx], "alt", tag::ALT, s_idx, alt_job % n)
        };
        let mut rng = stream(master, &[hyp_tag, s_idx as u64, trial as u64]);
        let outcome = procedure.run_trial(instance, &mut rng)?;
        assert!(
            outcome.coordinate_cost <= budget_total,
            "procedure exceeded its declared budget"
        );
        Ok(TrialRecord {
            hypothesis,
            s_index: s_idx,
            trial,
            outcome,
        })
    });

    let mut records = Vec::with_capacity(total_jobs);
    for r in results {
        records.push(r?);
    }
    let type1 = records[..n].iter().filter(|r| r.outcome.reject).count() as f64 / n as f64;
    let mut per_alternative_type2 = Vec::with_capacity(alt_instances.len());
    for s_idx in 0..alt_instances.len() {
        let slice = &records[n * (1 + s_idx)..n * (2 + s_idx)];
        let accepts = slice.iter().filter(|r| !r.outcome.reject).count();
        per_alternative_type2.push(accepts as f64 / n as f64);
    }
    let type2_worst = per_alternative_type2.iter().cloned().fold(0.0, f64::max);
    let estimate = RiskEstimate {
        type1_rate: type1,
        type2_worst_rate: type2_worst,
        risk: type1 + type2_worst,
        ci_halfwidth: hoeffding_ci(n, config.delta)?,
        trials_null: n,
        trials_alt: n,
        alternatives_evaluated: alt_instances.len(),
        per_alternative_type2,
    };
    Ok((estimate, records))
}
