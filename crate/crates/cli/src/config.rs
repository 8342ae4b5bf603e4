//! Experiment configuration: JSON with a strict schema (unknown keys are
//! errors), grids over `n`, `k`, `rho`, `m`, and procedure wiring.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use corrsense::detectors::{
    Calibration, ModifiedStDisjointIntervals, RandomizedKsets, SimpleSum, StConfig,
    StDisjointIntervals, UniformScan, VarianceThresholding,
};
use corrsense::model::{ContaminationClass, ModelKind};
use corrsense::risk::Procedure;
use corrsense::rng::{derive_seed, tag};

/// A scalar or a list; grids are the cartesian product of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcedureKind {
    UniformScan,
    SimpleSum,
    StDisjoint,
    ModifiedSt,
    RandomizedKsets,
    VarianceThresholding,
}

impl ProcedureKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProcedureKind::UniformScan => "uniform_scan",
            ProcedureKind::SimpleSum => "simple_sum",
            ProcedureKind::StDisjoint => "st_disjoint",
            ProcedureKind::ModifiedSt => "modified_st",
            ProcedureKind::RandomizedKsets => "randomized_ksets",
            ProcedureKind::VarianceThresholding => "variance_thresholding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Ksets,
    Kintervals,
    DisjointKintervals,
}

impl ClassKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClassKind::Ksets => "ksets",
            ClassKind::Kintervals => "kintervals",
            ClassKind::DisjointKintervals => "disjoint_kintervals",
        }
    }

    pub fn class(&self, n: u32, k: u32) -> ContaminationClass {
        match self {
            ClassKind::Ksets => ContaminationClass::KSets { n, k },
            ClassKind::Kintervals => ContaminationClass::KIntervals { n, k },
            ClassKind::DisjointKintervals => ContaminationClass::DisjointKIntervals { n, k },
        }
    }
}

/// The experiment configuration file. Grid fields accept a scalar or an
/// array; `simulate` requires scalars, `sweep` takes the cartesian product.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub procedure: ProcedureKind,
    pub model: ModelKind,
    pub class: ClassKind,
    pub n: OneOrMany<u32>,
    pub k: OneOrMany<u32>,
    pub rho: OneOrMany<f64>,
    pub m: OneOrMany<u32>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Scanned-set size for the randomized k-set procedure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Sampled alternatives for non-exchangeable procedures.
    #[serde(default = "default_alternatives")]
    pub alternatives: u32,
    /// Simulations for Monte Carlo threshold calibration.
    #[serde(default = "default_calibration_sims")]
    pub calibration_sims: usize,
    /// Worker threads; absent means the default pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Output path; commands may override it with their own flags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_delta() -> f64 {
    0.05
}

fn default_alternatives() -> u32 {
    8
}

fn default_calibration_sims() -> usize {
    10_000
}

/// One grid point of the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub n: u32,
    pub k: u32,
    pub rho: f64,
    pub m: u32,
}

impl ExperimentConfig {
    pub fn load(path: &str) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            bail!(
                "unsupported schema_version {} (expected 1)",
                self.schema_version
            );
        }
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        for n in self.n.values() {
            if n == 0 {
                bail!("grid value n = 0");
            }
        }
        for k in self.k.values() {
            if k == 0 {
                bail!("grid value k = 0");
            }
        }
        for rho in self.rho.values() {
            if !(0.0..1.0).contains(&rho) {
                bail!("grid value rho = {rho} outside [0, 1)");
            }
        }
        for m in self.m.values() {
            if m == 0 {
                bail!("grid value m = 0");
            }
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha <= 0.0 {
            bail!("alpha = {} outside (0, 1)", self.alpha);
        }
        if !(0.0..1.0).contains(&self.delta) || self.delta <= 0.0 {
            bail!("delta = {} outside (0, 1)", self.delta);
        }
        // Procedure/model compatibility is checked before any trial runs.
        if self.procedure == ProcedureKind::VarianceThresholding
            && self.model != ModelKind::Unnormalized
        {
            bail!("variance_thresholding requires the unnormalized model");
        }
        match self.procedure {
            ProcedureKind::StDisjoint | ProcedureKind::ModifiedSt
                if self.class != ClassKind::DisjointKintervals =>
            {
                bail!(
                    "{} requires class disjoint_kintervals",
                    self.procedure.name()
                )
            }
            ProcedureKind::RandomizedKsets | ProcedureKind::VarianceThresholding
                if self.class != ClassKind::Ksets =>
            {
                bail!("{} requires class ksets", self.procedure.name())
            }
            _ => {}
        }
        Ok(())
    }

    /// Grid points in deterministic (n, k, rho, m) nesting order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for n in self.n.values() {
            for k in self.k.values() {
                for rho in self.rho.values() {
                    for m in self.m.values() {
                        points.push(GridPoint { n, k, rho, m });
                    }
                }
            }
        }
        points
    }

    /// Requires a single grid point (the `simulate` contract).
    pub fn single_point(&self) -> Result<GridPoint> {
        let grid = self.grid();
        if grid.len() != 1 {
            bail!(
                "this command needs scalar n/k/rho/m; got {} grid points",
                grid.len()
            );
        }
        Ok(grid[0])
    }

    /// Builds the configured procedure at a grid point. The Monte Carlo
    /// calibration seed derives from the master seed on a dedicated tag.
    pub fn build_procedure(&self, point: GridPoint) -> Result<Box<dyn Procedure>> {
        let class = self.class.class(point.n, point.k);
        let calibration_seed = derive_seed(self.seed, &[tag::CALIBRATION]);
        let calibration = Calibration::MonteCarloNull {
            alpha: self.alpha,
            n_sims: self.calibration_sims,
            seed: calibration_seed,
        };
        let st_config = StConfig::default();
        let boxed: Box<dyn Procedure> = match self.procedure {
            ProcedureKind::UniformScan => {
                Box::new(UniformScan::new(class, point.rho, point.m, calibration)?)
            }
            ProcedureKind::SimpleSum => {
                Box::new(SimpleSum::new(class, point.rho, point.m, self.alpha)?)
            }
            ProcedureKind::StDisjoint => Box::new(StDisjointIntervals::new(
                class, point.rho, point.m, self.model, st_config,
            )?),
            ProcedureKind::ModifiedSt => Box::new(ModifiedStDisjointIntervals::new(
                class, point.rho, point.m, self.model, st_config,
            )?),
            ProcedureKind::RandomizedKsets => {
                let p = self
                    .p
                    .ok_or_else(|| anyhow!("randomized_ksets needs the `p` field"))?;
                Box::new(RandomizedKsets::new(
                    class,
                    point.rho,
                    point.m,
                    p,
                    self.alpha,
                    self.calibration_sims,
                    calibration_seed,
                )?)
            }
            ProcedureKind::VarianceThresholding => Box::new(VarianceThresholding::new(
                class, point.rho, point.m, st_config,
            )?),
        };
        Ok(boxed)
    }
}
