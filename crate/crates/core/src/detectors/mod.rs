//! Detection procedures: non-adaptive scan and sum tests, generic sequential
//! thresholding over vector rows, its interval / truncated / variance
//! instantiations, and the randomized k-set procedure.

mod procedures;
mod scan;
mod st;

pub use procedures::{
    modified_st_disjoint_intervals, randomized_ksets_test, st_disjoint_intervals,
    variance_thresholding, ModifiedStDisjointIntervals, RandomizedKsets, SimpleSum,
    StDisjointIntervals, UniformScan, VarianceThresholding,
};
pub use scan::{
    localized_scan_statistic, localized_scan_test, samples_from_history, scan_null_threshold,
    simple_sum_test, Calibration, SampleMatrix, ScanStatistic, KSET_ENUMERATION_CAP,
};
pub use st::{
    null_median_lr, Orientation, QueryMode, ScoreMode, SequentialThresholding, StConfig,
    DEFAULT_EXTRA_PASSES, DEFAULT_GAMMA_SIMS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::rng::Stream;

/// How a procedure's run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The procedure ran to its natural end.
    Completed,
    /// The sensing budget refused a query; the procedure reports no detection.
    BudgetStop,
    /// Sequential thresholding aborted on its retained-size guard.
    SizeStop,
}

/// Binary decision with the statistic and threshold that produced it.
///
/// For statistic-based tests `reject == (statistic > threshold)`; sequential
/// thresholding reports the final survivor count against a zero threshold,
/// which preserves the same identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reject: bool,
    pub statistic: Option<f64>,
    pub threshold: Option<f64>,
    pub rounds_used: u64,
    pub coordinate_cost: u64,
    pub termination: Termination,
    /// Set when a scan maximization fell back to the greedy heuristic.
    pub approximate: bool,
}

/// A simple-vs-simple row model: null and alternative log-densities over
/// `R^d`, with an optional monotone sufficient-statistic reduction.
pub trait RowLikelihoodModel: Sync + Send {
    /// Row dimension `d`.
    fn dim(&self) -> u32;

    /// Null log-density at a row of length [`Self::dim`].
    fn loglik_null(&self, row: &[f64]) -> f64;

    /// Alternative log-density at a row.
    fn loglik_alt(&self, row: &[f64]) -> f64;

    /// `log f_1(row) - log f_0(row)`.
    fn log_lr(&self, row: &[f64]) -> f64 {
        self.loglik_alt(row) - self.loglik_null(row)
    }

    /// Per-row scalar whose sum over observations is a strictly increasing
    /// function of the summed log-LR, when such a reduction exists.
    fn monotone_stat(&self, _row: &[f64]) -> Option<f64> {
        None
    }

    /// Exact null median of the sum of `m_bar` monotone statistics.
    fn monotone_sum_null_median(&self, _m_bar: u32) -> Option<f64> {
        None
    }

    /// The summed log-LR corresponding to a summed monotone statistic.
    fn log_lr_sum_at_stat(&self, _stat_sum: f64, _m_bar: u32) -> Option<f64> {
        None
    }

    /// One draw of the null law of the summed log-LR over `m_bar` rows.
    /// The default materializes standard-normal rows, which is the null of
    /// every model in this crate; implementations may shortcut.
    fn sample_null_log_lr_sum(&self, m_bar: u32, rng: &mut Stream) -> f64 {
        use rand::Rng;
        let d = self.dim() as usize;
        let mut row = vec![0.0f64; d];
        let mut total = 0.0;
        for _ in 0..m_bar {
            for x in row.iter_mut() {
                *x = rng.sample(rand_distr::StandardNormal);
            }
            total += self.log_lr(&row);
        }
        total
    }

    /// Key for the calibrated-median cache: `(variant, rho bits, dim)`.
    fn cache_key(&self) -> (u8, u64, u32);
}

/// Equicorrelated Gaussian row against the standard normal, for either
/// covariance model. The normalized variant has no scalar sufficient
/// statistic (the log-LR mixes `q` and `s^2` with opposite signs); the
/// unnormalized one is monotone in `s^2`.
#[derive(Debug, Clone, Copy)]
pub struct EquicorrRowModel {
    pub rho: f64,
    pub dim: u32,
    pub model: ModelKind,
}

impl EquicorrRowModel {
    pub fn new(rho: f64, dim: u32, model: ModelKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDetector(
                "row dimension must be positive".into(),
            ));
        }
        match model {
            ModelKind::Normalized if !(0.0..1.0).contains(&rho) => {
                return Err(Error::InvalidRho(format!("rho = {rho} outside [0, 1)")));
            }
            ModelKind::Unnormalized if rho < 0.0 => {
                return Err(Error::InvalidRho(format!("rho = {rho} negative")));
            }
            _ => {}
        }
        Ok(EquicorrRowModel { rho, dim, model })
    }

    fn stats(&self, row: &[f64]) -> (f64, f64) {
        debug_assert_eq!(row.len(), self.dim as usize);
        let q: f64 = row.iter().map(|x| x * x).sum();
        let s: f64 = row.iter().sum();
        (q, s)
    }
}

impl RowLikelihoodModel for EquicorrRowModel {
    fn dim(&self) -> u32 {
        self.dim
    }

    fn loglik_null(&self, row: &[f64]) -> f64 {
        let (q, _) = self.stats(row);
        const LN_2PI: f64 = 1.8378770664093453;
        -0.5 * q - 0.5 * self.dim as f64 * LN_2PI
    }

    fn loglik_alt(&self, row: &[f64]) -> f64 {
        let (q, s) = self.stats(row);
        crate::divergence::equicorr_loglik_from_stats(q, s, self.dim, self.rho, self.model)
            .expect("parameters validated at construction")
    }

    fn log_lr(&self, row: &[f64]) -> f64 {
        let (q, s) = self.stats(row);
        crate::divergence::equicorr_loglr_from_stats(q, s, self.dim, self.rho, self.model)
    }

    fn monotone_stat(&self, row: &[f64]) -> Option<f64> {
        match self.model {
            ModelKind::Normalized => None,
            ModelKind::Unnormalized => {
                let s: f64 = row.iter().sum();
                Some(s * s)
            }
        }
    }

    fn monotone_sum_null_median(&self, m_bar: u32) -> Option<f64> {
        match self.model {
            ModelKind::Normalized => None,
            ModelKind::Unnormalized => {
                // s ~ N(0, d) under the null, so the stat sum is d * chi^2.
                Some(self.dim as f64 * chi2_median(m_bar))
            }
        }
    }

    fn log_lr_sum_at_stat(&self, stat_sum: f64, m_bar: u32) -> Option<f64> {
        match self.model {
            ModelKind::Normalized => None,
            ModelKind::Unnormalized => {
                let tail = 1.0 + self.dim as f64 * self.rho;
                Some(self.rho * stat_sum / (2.0 * tail) - 0.5 * m_bar as f64 * tail.ln())
            }
        }
    }

    fn sample_null_log_lr_sum(&self, m_bar: u32, rng: &mut Stream) -> f64 {
        use rand::Rng;
        // Under the null, s ~ N(0, d) and q - s^2/d ~ chi^2_{d-1}
        // independently; two draws per observation instead of d.
        let d = self.dim as f64;
        let mut total = 0.0;
        for _ in 0..m_bar {
            let s = d.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let q = if self.dim > 1 {
                let w: f64 =
                    rng.sample(rand_distr::ChiSquared::new(d - 1.0).expect("dim >= 2 checked"));
                w + s * s / d
            } else {
                s * s
            };
            total +=
                crate::divergence::equicorr_loglr_from_stats(q, s, self.dim, self.rho, self.model);
        }
        total
    }

    fn cache_key(&self) -> (u8, u64, u32) {
        let variant = match self.model {
            ModelKind::Normalized => 1,
            ModelKind::Unnormalized => 2,
        };
        (variant, self.rho.to_bits(), self.dim)
    }
}

/// Scalar variance-scale model: `N(0,1)` against `N(0, 1+rho)`, equivalently
/// `chi^2_1` against `(1+rho) chi^2_1` on the squared value. The log-LR is
/// strictly increasing in `y = x^2`, with `sum y ~ chi^2_{m_bar}` under the
/// null.
#[derive(Debug, Clone, Copy)]
pub struct VarianceScaleModel {
    pub rho: f64,
}

impl VarianceScaleModel {
    pub fn new(rho: f64) -> Result<Self> {
        if rho <= -1.0 {
            return Err(Error::InvalidRho(format!(
                "variance scale 1+rho must be positive: {rho}"
            )));
        }
        Ok(VarianceScaleModel { rho })
    }
}

impl RowLikelihoodModel for VarianceScaleModel {
    fn dim(&self) -> u32 {
        1
    }

    fn loglik_null(&self, row: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        -0.5 * row[0] * row[0] - 0.5 * LN_2PI
    }

    fn loglik_alt(&self, row: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        let var = 1.0 + self.rho;
        -0.5 * row[0] * row[0] / var - 0.5 * var.ln() - 0.5 * LN_2PI
    }

    fn monotone_stat(&self, row: &[f64]) -> Option<f64> {
        Some(row[0] * row[0])
    }

    fn monotone_sum_null_median(&self, m_bar: u32) -> Option<f64> {
        Some(chi2_median(m_bar))
    }

    fn log_lr_sum_at_stat(&self, stat_sum: f64, m_bar: u32) -> Option<f64> {
        let var = 1.0 + self.rho;
        Some(self.rho * stat_sum / (2.0 * var) - 0.5 * m_bar as f64 * var.ln())
    }

    fn cache_key(&self) -> (u8, u64, u32) {
        (3, self.rho.to_bits(), 1)
    }
}

/// Median of the chi-squared distribution with `df` degrees of freedom.
pub(crate) fn chi2_median(df: u32) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// Both evaluators are proper log-densities w.r.t. the same dominating
    /// measure: E_{f0}[exp(log f1 - log f0)] = 1 (Monte Carlo check).
    #[test]
    fn row_models_normalize() {
        let models: Vec<Box<dyn RowLikelihoodModel>> = vec![
            Box::new(EquicorrRowModel::new(0.4, 4, ModelKind::Normalized).unwrap()),
            Box::new(EquicorrRowModel::new(0.4, 4, ModelKind::Unnormalized).unwrap()),
            Box::new(VarianceScaleModel::new(0.6).unwrap()),
        ];
        let mut rng = stream(21, &[]);
        for model in &models {
            let d = model.dim() as usize;
            let sims = 200_000;
            let mut acc = 0.0;
            let mut row = vec![0.0; d];
            for _ in 0..sims {
                for x in row.iter_mut() {
                    *x = rng.sample(rand_distr::StandardNormal);
                }
                acc += model.log_lr(&row).exp();
            }
            let mean = acc / sims as f64;
            assert!((mean - 1.0).abs() < 0.05, "mean importance weight = {mean}");
        }
    }

    #[test]
    fn chi2_median_matches_reference() {
        // chi^2_8 median, the threshold behind the variance-thresholding
        // example with m_bar = 8.
        assert!((chi2_median(8) - 7.3441).abs() < 1e-3);
    }

    #[test]
    fn monotone_mapping_consistent_with_log_lr() {
        let model = VarianceScaleModel::new(0.5).unwrap();
        let rows = [[0.3], [-1.7], [0.9]];
        let stat_sum: f64 = rows.iter().map(|r| model.monotone_stat(r).unwrap()).sum();
        let lr_sum: f64 = rows.iter().map(|r| model.log_lr(r)).sum();
        let mapped = model
            .log_lr_sum_at_stat(stat_sum, rows.len() as u32)
            .unwrap();
        assert!((mapped - lr_sum).abs() < 1e-12);

        let eq = EquicorrRowModel::new(0.3, 5, ModelKind::Unnormalized).unwrap();
        let mut rng = stream(22, &[]);
        let mut stat_sum = 0.0;
        let mut lr_sum = 0.0;
        for _ in 0..7 {
            let row: Vec<f64> = (0..5)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            stat_sum += eq.monotone_stat(&row).unwrap();
            lr_sum += eq.log_lr(&row);
        }
        let mapped = eq.log_lr_sum_at_stat(stat_sum, 7).unwrap();
        assert!((mapped - lr_sum).abs() < 1e-10);
    }

    /// The shortcut null sampler for the equicorrelated row agrees in
    /// distribution with materialized rows (moment check).
    #[test]
    fn equicorr_null_shortcut_matches_direct() {
        let model = EquicorrRowModel::new(0.35, 6, ModelKind::Normalized).unwrap();
        let sims = 100_000;
        let mut rng = stream(23, &[]);
        let mut direct = Vec::with_capacity(sims);
        let mut row = [0.0f64; 6];
        for _ in 0..sims {
            for x in row.iter_mut() {
                *x = rng.sample(rand_distr::StandardNormal);
            }
            direct.push(model.log_lr(&row));
        }
        let mut shortcut = Vec::with_capacity(sims);
        for _ in 0..sims {
            shortcut.push(model.sample_null_log_lr_sum(1, &mut rng));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let (m1, m2) = (mean(&direct), mean(&shortcut));
        let (v1, v2) = (var(&direct), var(&shortcut));
        let se = (v1 / sims as f64).sqrt() + (v2 / sims as f64).sqrt();
        assert!((m1 - m2).abs() < 4.0 * se, "means {m1} vs {m2}");
        assert!((v1 - v2).abs() / v1 < 0.05, "variances {v1} vs {v2}");
    }
}
