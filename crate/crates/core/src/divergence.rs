//! Closed-form information quantities and minimax bounds.
//!
//! Kullback-Leibler divergences between the null and a contaminated block in
//! both covariance models, the bound `D(rho,k) = min[rho/(2(1-rho)),
//! rho^2 (k+1)]`, class complexity, the adaptive lower bound
//! `exp(-m k D)/4`, the cosh-based non-adaptive lower bound, and the
//! `H(b) = b - 1 - log b` calibration machinery.
//!
//! The equicorrelated `k x k` block `J_rho(k)` (unit diagonal, `rho`
//! off-diagonal) has eigenvalues `1 - rho` with multiplicity `k - 1` and
//! `1 + (k-1) rho` with multiplicity one; the spiked block `I + rho 1 1^T`
//! has eigenvalue `1 + rho k` once and `1` otherwise. All closed forms here
//! are assembled from those eigenvalues, and log-densities are computed in
//! `O(d)` from the sufficient statistics `q = sum x_i^2`, `s = sum x_i` via
//! the Sherman-Morrison inverse.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ContaminationClass, ModelKind};

/// `g(x) = log(1+x) + 1/(1+x) - 1`, the chunk both KL closed forms are built
/// from. Computed as `ln_1p(x) - x/(1+x)` for accuracy near zero.
#[inline]
pub fn kl_chunk(x: f64) -> f64 {
    debug_assert!(x > -1.0);
    x.ln_1p() - x / (1.0 + x)
}

/// KL(P_0 || P_S) for the normalized model with |S| = k.
///
/// Zero for k < 2; otherwise `[(k-1) g(-rho) + g((k-1) rho)] / 2` with `g`
/// as in [`kl_chunk`], which is the eigenvalue expansion of the usual
/// trace/log-det Gaussian formula.
pub fn kl_normalized(rho: f64, k: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "normalized model needs rho in [0,1), got {rho}"
        )));
    }
    if k < 2 {
        return Ok(0.0);
    }
    let km1 = (k - 1) as f64;
    Ok(0.5 * (km1 * kl_chunk(-rho) + kl_chunk(km1 * rho)))
}

/// KL(P_0 || P_S) for the unnormalized (spiked) model with |S| = k.
///
/// `[-1 + 1/(1+rho k) + log(1+rho k)] / 2` for k >= 1 and zero for k = 0.
/// A single contaminated coordinate has variance `1 + rho != 1`, so the
/// divergence is genuinely nonzero from k = 1 on.
pub fn kl_unnormalized(rho: f64, k: u32) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::Domain(format!(
            "unnormalized model needs rho >= 0, got {rho}"
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    Ok(0.5 * kl_chunk(rho * k as f64))
}

/// KL(chi^2_1 || (1+rho) chi^2_1) = [log(1+rho) - rho/(1+rho)] / 2.
///
/// Also the KL between N(0,1) and N(0,1+rho); equals `rho^2/4 + o(rho^2)`.
pub fn kl_chi2_scale(rho: f64) -> Result<f64> {
    if rho <= -1.0 {
        return Err(Error::Domain(format!(
            "scale factor 1+rho must be positive, got rho={rho}"
        )));
    }
    Ok(0.5 * kl_chunk(rho))
}

/// Which branch of the min in `D(rho,k)` was active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DBranch {
    /// `rho / (2 (1 - rho))`
    Linear,
    /// `rho^2 (k + 1)`
    Quadratic,
}

/// `D(rho, k) = min[rho/(2(1-rho)), rho^2 (k+1)]` with its active branch.
pub fn d_bound(rho: f64, k: u32) -> Result<(f64, DBranch)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "d_bound needs rho in [0,1), got {rho}"
        )));
    }
    let linear = rho / (2.0 * (1.0 - rho));
    let quadratic = rho * rho * (k as f64 + 1.0);
    Ok(if linear <= quadratic {
        (linear, DBranch::Linear)
    } else {
        (quadratic, DBranch::Quadratic)
    })
}

/// Minimax risk lower bound for adaptive sensing with budget `M = m n`:
/// `exp(-m k D(rho,k)) / 4`, in `(0, 1/4]`.
pub fn adaptive_lower_bound(rho: f64, k: u32, m: f64) -> Result<f64> {
    if m < 0.0 {
        return Err(Error::Domain(format!("m must be nonnegative, got {m}")));
    }
    let (d, _) = d_bound(rho, k)?;
    Ok(0.25 * (-m * k as f64 * d).exp())
}

/// Class complexity `cpl(C, M)`: `M k / n` for k-sets, k-intervals and
/// disjoint k-intervals with `n/k` integer, and `2 M k / n` for disjoint
/// k-intervals otherwise. Undefined for rectangles.
pub fn class_complexity(class: &ContaminationClass, budget: u64) -> Result<f64> {
    class.validate()?;
    let (n, k) = (class.n() as f64, class.k() as f64);
    let mk_over_n = budget as f64 * k / n;
    match class {
        ContaminationClass::KSets { .. } | ContaminationClass::KIntervals { .. } => Ok(mk_over_n),
        ContaminationClass::DisjointKIntervals { n, k } => {
            if n.is_multiple_of(*k) {
                Ok(mk_over_n)
            } else {
                Ok(2.0 * mk_over_n)
            }
        }
        ContaminationClass::Rectangles { .. } => Err(Error::UnsupportedClass),
    }
}

/// Ceiling on the KL divergence of a restriction: `KL(P_0|_A || P_S|_A)` is
/// at most `D(rho,k) |A & S|` (normalized, rho <= 1/2) or
/// `min[rho/2, rho^2 k/2] |A & S|` (unnormalized). A test-oracle bound.
pub fn kl_restriction_bound(rho: f64, k: u32, overlap: u32, model: ModelKind) -> Result<f64> {
    if overlap > k {
        return Err(Error::Domain(format!("overlap {overlap} exceeds k = {k}")));
    }
    match model {
        ModelKind::Normalized => {
            if rho > 0.5 {
                return Err(Error::Domain(format!(
                    "normalized restriction bound is stated for rho <= 1/2, got {rho}"
                )));
            }
            let (d, _) = d_bound(rho, k)?;
            Ok(d * overlap as f64)
        }
        ModelKind::Unnormalized => {
            if rho < 0.0 {
                return Err(Error::Domain("rho must be nonnegative".into()));
            }
            Ok((rho / 2.0).min(rho * rho * k as f64 / 2.0) * overlap as f64)
        }
    }
}

/// Exact pmf of `Z`, the overlap of two class members drawn independently
/// and uniformly at random. Entries are `(z, P(Z = z))` with nonzero mass.
pub fn overlap_pmf(class: &ContaminationClass) -> Result<Vec<(u32, f64)>> {
    class.validate()?;
    match *class {
        ContaminationClass::KSets { n, k } => {
            // Hypergeometric(n; k; k), computed in log space.
            let ln_choose = |a: f64, b: f64| -> f64 {
                ln_gamma(a + 1.0) - ln_gamma(b + 1.0) - ln_gamma(a - b + 1.0)
            };
            let (nf, kf) = (n as f64, k as f64);
            let denom = ln_choose(nf, kf);
            let mut pmf = Vec::new();
            for z in 0..=k {
                if k - z > n - k {
                    continue;
                }
                let zf = z as f64;
                let lp = ln_choose(kf, zf) + ln_choose(nf - kf, kf - zf) - denom;
                pmf.push((z, lp.exp()));
            }
            Ok(pmf)
        }
        ContaminationClass::KIntervals { n, k } => Ok(interval_overlap_pmf(n, k)),
        ContaminationClass::DisjointKIntervals { n, k } => {
            let blocks = (n / k) as f64;
            if blocks <= 1.0 {
                return Ok(vec![(k, 1.0)]);
            }
            Ok(vec![(0, 1.0 - 1.0 / blocks), (k, 1.0 / blocks)])
        }
        ContaminationClass::Rectangles { n1, n2, k1, k2 } => {
            // Overlaps factor across axes: Z = Z_1 * Z_2 with independent
            // interval overlaps in each dimension.
            let pmf1 = interval_overlap_pmf(n1, k1);
            let pmf2 = interval_overlap_pmf(n2, k2);
            let mut acc = std::collections::BTreeMap::new();
            for &(z1, p1) in &pmf1 {
                for &(z2, p2) in &pmf2 {
                    *acc.entry(z1 * z2).or_insert(0.0) += p1 * p2;
                }
            }
            Ok(acc.into_iter().collect())
        }
    }
}

/// Overlap pmf for two uniform k-intervals in `[n]`, by counting endpoint
/// pairs at each displacement. O(k) terms.
fn interval_overlap_pmf(n: u32, k: u32) -> Vec<(u32, f64)> {
    let positions = (n - k + 1) as u64;
    let total = (positions * positions) as f64;
    let mut pmf = Vec::new();
    let mut covered = 0u64;
    // Overlap z corresponds to displacement d = k - z between left endpoints.
    for z in (1..=k).rev() {
        let d = (k - z) as u64;
        let count = if d == 0 {
            positions
        } else if d < positions {
            2 * (positions - d)
        } else {
            0
        };
        if count > 0 {
            pmf.push((z, count as f64 / total));
            covered += count;
        }
    }
    let rest = positions * positions - covered;
    if rest > 0 {
        pmf.push((0, rest as f64 / total));
    }
    pmf.sort_by_key(|&(z, _)| z);
    pmf
}

/// Numerically stable `log cosh x`.
#[inline]
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
}

fn logsumexp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Non-adaptive (uniform sensing) minimax risk lower bound:
/// `1/2 - sqrt(E[cosh^m(8 rho Z / (1-rho))] - 1) / 4` for the normalized
/// model and `1/2 - sqrt(E[cosh^m(8 rho Z)] - 1) / 4` for the unnormalized
/// one, where `Z` is the overlap of two independent uniform class members.
/// Stated for `rho in [0, 0.9)`; the expectation is evaluated in log space
/// and the result clipped to `[0, 1/2]`.
pub fn nonadaptive_lower_bound(
    class: &ContaminationClass,
    rho: f64,
    m: u32,
    model: ModelKind,
) -> Result<f64> {
    if !(0.0..0.9).contains(&rho) {
        return Err(Error::Domain(format!(
            "non-adaptive bound is stated for rho in [0, 0.9), got {rho}"
        )));
    }
    let scale = match model {
        ModelKind::Normalized => 8.0 * rho / (1.0 - rho),
        ModelKind::Unnormalized => 8.0 * rho,
    };
    let pmf = overlap_pmf(class)?;
    let ln_expectation = logsumexp(
        pmf.iter()
            .map(|&(z, p)| p.ln() + m as f64 * ln_cosh(scale * z as f64)),
    );
    // E >= 1 since cosh >= 1; expm1 keeps precision when E is close to 1.
    let excess = if ln_expectation > 700.0 {
        f64::INFINITY
    } else {
        // Round-off can leave ln E a hair below zero when cosh == 1.
        ln_expectation.exp_m1().max(0.0)
    };
    Ok((0.5 - 0.25 * excess.sqrt()).clamp(0.0, 0.5))
}

/// `H(b) = b - 1 - log b` for `b > 1`, the chi-square large-deviation rate.
pub fn h_function(b: f64) -> Result<f64> {
    if b <= 1.0 {
        return Err(Error::Domain(format!("h_function needs b > 1, got {b}")));
    }
    Ok(b - 1.0 - b.ln())
}

/// Inverse of [`h_function`] on `b > 1`: the unique `b > 1` with `H(b) = y`,
/// to absolute tolerance 1e-12. `h_inverse(0) = 1`.
pub fn h_inverse(y: f64) -> Result<f64> {
    if y < 0.0 {
        return Err(Error::Domain(format!("h_inverse needs y >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    let h = |b: f64| b - 1.0 - b.ln();
    let mut lo = 1.0;
    let mut hi = (y + 2.0).max(2.0);
    while h(hi) < y {
        hi *= 2.0;
    }
    // Bisection with a Newton polish; H is increasing on (1, inf).
    for _ in 0..200 {
        if hi - lo <= 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..4 {
        let step = (h(b) - y) / (1.0 - 1.0 / b);
        let next = b - step;
        if next > 1.0 {
            b = next;
        }
    }
    Ok(b.max(lo.max(1.0)))
}

/// Log-density of the equicorrelated Gaussian at a row, in O(d) from the
/// sufficient statistics `q = sum x_i^2` and `s = sum x_i`.
///
/// Normalized covariance `J_rho(d)`; unnormalized `I_d + rho 1 1^T`.
pub fn equicorr_loglik(row: &[f64], rho: f64, model: ModelKind) -> Result<f64> {
    let d = row.len();
    if d == 0 {
        return Err(Error::Domain("row must be nonempty".into()));
    }
    let q: f64 = row.iter().map(|x| x * x).sum();
    let s: f64 = row.iter().sum();
    equicorr_loglik_from_stats(q, s, d as u32, rho, model)
}

/// [`equicorr_loglik`] from precomputed sufficient statistics.
pub fn equicorr_loglik_from_stats(
    q: f64,
    s: f64,
    d: u32,
    rho: f64,
    model: ModelKind,
) -> Result<f64> {
    const LN_2PI: f64 = 1.8378770664093453;
    let df = d as f64;
    match model {
        ModelKind::Normalized => {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Domain(format!(
                    "normalized needs rho in [0,1), got {rho}"
                )));
            }
            let tail = 1.0 + (df - 1.0) * rho;
            let quad = q / (1.0 - rho) - rho * s * s / ((1.0 - rho) * tail);
            let logdet = (df - 1.0) * (1.0 - rho).ln() + tail.ln();
            Ok(-0.5 * quad - 0.5 * logdet - 0.5 * df * LN_2PI)
        }
        ModelKind::Unnormalized => {
            if rho < 0.0 {
                return Err(Error::Domain(format!(
                    "unnormalized needs rho >= 0, got {rho}"
                )));
            }
            let tail = 1.0 + df * rho;
            let quad = q - rho * s * s / tail;
            Ok(-0.5 * quad - 0.5 * tail.ln() - 0.5 * df * LN_2PI)
        }
    }
}

/// `log f_1 - log f_0` for one equicorrelated row against the standard
/// normal, from sufficient statistics. For the normalized model this is
/// `-(rho/(2(1-rho))) q + (rho/(2(1-rho)(1+(d-1)rho))) s^2 - logdet/2`.
pub fn equicorr_loglr_from_stats(q: f64, s: f64, d: u32, rho: f64, model: ModelKind) -> f64 {
    let df = d as f64;
    match model {
        ModelKind::Normalized => {
            let tail = 1.0 + (df - 1.0) * rho;
            let a = rho / (2.0 * (1.0 - rho));
            let b = rho / (2.0 * (1.0 - rho) * tail);
            let logdet = (df - 1.0) * (1.0 - rho).ln() + tail.ln();
            -a * q + b * s * s - 0.5 * logdet
        }
        ModelKind::Unnormalized => {
            let tail = 1.0 + df * rho;
            rho * s * s / (2.0 * tail) - 0.5 * tail.ln()
        }
    }
}

/// Truncation objective for p-truncated interval sensing:
/// `floor(m k / p) * KL(P_0^p || P_S^p)`, the per-session information when
/// each interval is cut to its first `p` coordinates and measured
/// `floor(mk/p)` times.
pub fn truncation_objective(rho: f64, k: u32, m: u32, p: u32, model: ModelKind) -> Result<f64> {
    if !(2..=k).contains(&p) {
        return Err(Error::Domain(format!("p = {p} outside [2, k = {k}]")));
    }
    let kl = match model {
        ModelKind::Normalized => kl_normalized(rho, p)?,
        ModelKind::Unnormalized => kl_unnormalized(rho, p)?,
    };
    Ok((m as u64 * k as u64 / p as u64) as f64 * kl)
}

/// Exact scan of [`truncation_objective`] over `p in {2..k}`; returns the
/// maximizing width and its objective value. For `rho k` below 1 the optimum
/// clamps to `k` (no truncation helps).
pub fn optimal_truncation_width(rho: f64, k: u32, m: u32, model: ModelKind) -> Result<(u32, f64)> {
    if k < 2 {
        return Err(Error::Domain("need k >= 2 to truncate".into()));
    }
    let mut best = (2u32, f64::NEG_INFINITY);
    for p in 2..=k {
        let value = truncation_objective(rho, k, m, p, model)?;
        if value > best.1 {
            best = (p, value);
        }
    }
    Ok(best)
}

/// A bound calculation with its inputs echoed and branch annotations.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub class_kind: String,
    pub n: u32,
    pub k: u32,
    pub m: f64,
    pub rho: f64,
    pub model: ModelKind,
    pub d_bound: f64,
    pub d_branch: DBranch,
    pub adaptive_lower_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonadaptive_lower_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_complexity: Option<f64>,
    pub notes: Vec<String>,
}

/// Assembles the bound calculators into one report for the budget `M = m n`.
pub fn bound_report(
    class: &ContaminationClass,
    rho: f64,
    m: u32,
    model: ModelKind,
) -> Result<BoundReport> {
    class.validate()?;
    let k = class.k();
    let (d, branch) = d_bound(rho, k)?;
    let adaptive = adaptive_lower_bound(rho, k, m as f64)?;
    let mut notes = Vec::new();
    let nonadaptive = match nonadaptive_lower_bound(class, rho, m, model) {
        Ok(v) => Some(v),
        Err(_) => {
            notes.push("nonadaptive bound undefined: rho outside [0, 0.9)".to_string());
            None
        }
    };
    let budget = m as u64 * class.n() as u64;
    let complexity = match class_complexity(class, budget) {
        Ok(v) => Some(v),
        Err(_) => {
            notes.push("class complexity undefined for rectangles".to_string());
            None
        }
    };
    Ok(BoundReport {
        schema_version: 1,
        class_kind: class.kind_name().to_string(),
        n: class.n(),
        k,
        m: m as f64,
        rho,
        model,
        d_bound: d,
        d_branch: branch,
        adaptive_lower_bound: adaptive,
        nonadaptive_lower_bound: nonadaptive,
        class_complexity: complexity,
        notes,
    })
}

/// The elementary inequalities used throughout the bound computations, each
/// exposed as a slack function that is nonnegative on its stated domain.
pub mod inequalities {
    use statrs::function::gamma::ln_gamma;

    use super::kl_chunk;

    /// `log(1+x) <= x` for `x > -1`.
    pub fn slack_log_one_plus(x: f64) -> f64 {
        x - x.ln_1p()
    }

    /// `log(1+x) + 1/(1+x) - 1 <= x^2` for `x > 0`.
    pub fn slack_chunk_upper(x: f64) -> f64 {
        x * x - kl_chunk(x)
    }

    /// `log(1-x) + 1/(1-x) - 1 <= 2 x^2` for `0 < x < 1/2`.
    pub fn slack_chunk_upper_reflected(x: f64) -> f64 {
        2.0 * x * x - kl_chunk(-x)
    }

    /// `-log(1-x) - 1/(1-x) + 1 <= x^2` for `x < 1`.
    pub fn slack_chunk_upper_negated(x: f64) -> f64 {
        x * x + kl_chunk(-x)
    }

    /// `log(1+x) + 1/(1+x) - 1 >= x^2 / 8` for `-1 < x <= 1`.
    pub fn slack_chunk_lower(x: f64) -> f64 {
        kl_chunk(x) - x * x / 8.0
    }

    /// `log(1+x) + 1/(1+x) - 1 >= log(1+x) / 5` for `x >= 1`.
    pub fn slack_log_lower(x: f64) -> f64 {
        kl_chunk(x) - x.ln_1p() / 5.0
    }

    /// `x! >= sqrt(2 pi x) (x/e)^x` for `x > 0`, in log space.
    pub fn slack_stirling(x: f64) -> f64 {
        ln_gamma(x + 1.0) - (0.5 * (2.0 * std::f64::consts::PI * x).ln() + x * (x.ln() - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_normalized_examples() {
        assert_eq!(kl_normalized(0.5, 1).unwrap(), 0.0);
        assert_eq!(kl_normalized(0.0, 10).unwrap(), 0.0);
        // Printed three-chunk form agrees with the two-chunk rearrangement.
        let (rho, k) = (0.3f64, 4u32);
        let expanded = 0.5
            * (k as f64 * (-1.0 + 1.0 / (1.0 - rho) + (1.0 - rho).ln())
                - (1.0 / (1.0 - rho) + (1.0 - rho).ln())
                + (1.0 / (1.0 + rho * 3.0) + (1.0 + rho * 3.0).ln()));
        assert!((kl_normalized(rho, k).unwrap() - expanded).abs() < 1e-14);
        assert!(kl_normalized(1.0, 3).is_err());
    }

    #[test]
    fn kl_unnormalized_examples() {
        assert_eq!(kl_unnormalized(0.0, 7).unwrap(), 0.0);
        assert_eq!(kl_unnormalized(0.4, 0).unwrap(), 0.0);
        // rho = 1, k = 1: variance doubling, (log 2 - 1/2)/2.
        let expected = 0.5 * (std::f64::consts::LN_2 - 0.5);
        assert!((kl_unnormalized(1.0, 1).unwrap() - expected).abs() < 1e-15);
        // k = 1 carries real information (the printed k >= 2 indicator is an
        // erratum; the proof assumes k >= 1).
        assert!(kl_unnormalized(0.5, 1).unwrap() > 0.0);
        // Effective block p = ceil(1/rho) with rho p >= 1 gives KL >= 1/11,
        // in both covariance models.
        for rho in [0.05f64, 0.1, 0.3, 0.7] {
            let p = (1.0 / rho).ceil() as u32;
            assert!(kl_unnormalized(rho, p).unwrap() >= 1.0 / 11.0);
            assert!(kl_normalized(rho, p).unwrap() >= 1.0 / 11.0);
        }
    }

    #[test]
    fn kl_chi2_scale_examples() {
        assert_eq!(kl_chi2_scale(0.0).unwrap(), 0.0);
        let expected = 0.5 * (std::f64::consts::LN_2 - 0.5);
        assert!((kl_chi2_scale(1.0).unwrap() - expected).abs() < 1e-15);
        // Small-rho asymptote rho^2/4.
        let rho = 1e-3;
        let ratio = kl_chi2_scale(rho).unwrap() / (rho * rho);
        assert!((ratio - 0.25).abs() < 1e-3, "ratio = {ratio}");
        assert!(kl_chi2_scale(-1.0).is_err());
    }

    #[test]
    fn d_bound_branches() {
        assert_eq!(d_bound(0.0, 5).unwrap().0, 0.0);
        let (v, b) = d_bound(0.1, 9).unwrap();
        assert!((v - 0.1 / 1.8).abs() < 1e-15);
        assert_eq!(b, DBranch::Linear);
        // Crossover where rho (k+1) 2 (1-rho) = 1: scan a grid and check the
        // annotated branch matches the direct comparison.
        for k in [1u32, 4, 16, 64] {
            for i in 1..100 {
                let rho = i as f64 / 101.0;
                let (_, branch) = d_bound(rho, k).unwrap();
                let crossing = rho * (k as f64 + 1.0) * 2.0 * (1.0 - rho);
                let expect = if crossing >= 1.0 {
                    DBranch::Linear
                } else {
                    DBranch::Quadratic
                };
                assert_eq!(branch, expect, "rho={rho}, k={k}");
            }
        }
    }

    #[test]
    fn adaptive_lower_bound_examples() {
        assert_eq!(adaptive_lower_bound(0.7, 5, 0.0).unwrap(), 0.25);
        assert_eq!(adaptive_lower_bound(0.0, 5, 100.0).unwrap(), 0.25);
        let v = adaptive_lower_bound(0.1, 9, 10.0).unwrap();
        assert!((v - 0.25 * (-5.0f64).exp()).abs() < 1e-12);
        assert!(v > 0.0 && v <= 0.25);
        // Bounded by 1/4 everywhere, with equality exactly when m k D = 0.
        for &m in &[0.0f64, 1.0, 7.0, 100.0] {
            for k in [0u32, 1, 3, 32] {
                for i in 0..10 {
                    let rho = i as f64 * 0.1;
                    let v = adaptive_lower_bound(rho, k, m).unwrap();
                    assert!(v <= 0.25);
                    let (d, _) = d_bound(rho, k).unwrap();
                    assert_eq!(v == 0.25, m * k as f64 * d == 0.0, "m={m} k={k} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn class_complexity_examples() {
        let ksets = ContaminationClass::KSets { n: 100, k: 10 };
        assert_eq!(class_complexity(&ksets, 500).unwrap(), 50.0);
        let disjoint = ContaminationClass::DisjointKIntervals { n: 100, k: 10 };
        assert_eq!(class_complexity(&disjoint, 500).unwrap(), 50.0);
        // n/k non-integer doubles the value: 2 * 515 * 10 / 103 = 100.
        let ragged = ContaminationClass::DisjointKIntervals { n: 103, k: 10 };
        assert_eq!(class_complexity(&ragged, 515).unwrap(), 100.0);
        let rect = ContaminationClass::Rectangles {
            n1: 10,
            n2: 10,
            k1: 2,
            k2: 2,
        };
        assert!(matches!(
            class_complexity(&rect, 100),
            Err(Error::UnsupportedClass)
        ));
    }

    #[test]
    fn restriction_bound_examples() {
        assert_eq!(
            kl_restriction_bound(0.3, 5, 0, ModelKind::Normalized).unwrap(),
            0.0
        );
        let v = kl_restriction_bound(0.2, 5, 3, ModelKind::Normalized).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
        assert!(kl_restriction_bound(0.6, 5, 2, ModelKind::Normalized).is_err());
        let u = kl_restriction_bound(0.2, 5, 3, ModelKind::Unnormalized).unwrap();
        assert!((u - 3.0 * (0.1f64).min(0.2 * 0.2 * 5.0 / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn overlap_pmfs_are_distributions() {
        let classes = [
            ContaminationClass::KSets { n: 100, k: 5 },
            ContaminationClass::KIntervals { n: 40, k: 7 },
            ContaminationClass::DisjointKIntervals { n: 40, k: 8 },
            ContaminationClass::Rectangles {
                n1: 8,
                n2: 9,
                k1: 2,
                k2: 3,
            },
        ];
        for class in classes {
            let pmf = overlap_pmf(&class).unwrap();
            let total: f64 = pmf.iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "{class:?}: total = {total}");
            assert!(pmf.iter().all(|&(_, p)| p >= 0.0));
        }
        // Exact interval pmf agrees with brute-force pair counting.
        let (n, k) = (17u32, 4u32);
        let pmf = overlap_pmf(&ContaminationClass::KIntervals { n, k }).unwrap();
        let positions = n - k + 1;
        let mut counts = std::collections::BTreeMap::new();
        for u in 0..positions {
            for v in 0..positions {
                let d = u.abs_diff(v);
                let z = k.saturating_sub(d);
                *counts.entry(z).or_insert(0u64) += 1;
            }
        }
        for (z, p) in pmf {
            let expected = counts[&z] as f64 / (positions as f64 * positions as f64);
            assert!((p - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn nonadaptive_bound_edges() {
        let class = ContaminationClass::KSets { n: 100, k: 5 };
        assert_eq!(
            nonadaptive_lower_bound(&class, 0.0, 10, ModelKind::Normalized).unwrap(),
            0.5
        );
        assert!(nonadaptive_lower_bound(&class, 0.9, 10, ModelKind::Normalized).is_err());
        // Overflow-safe at large m and strong correlation.
        let v = nonadaptive_lower_bound(
            &ContaminationClass::DisjointKIntervals { n: 4096, k: 64 },
            0.85,
            10_000,
            ModelKind::Normalized,
        )
        .unwrap();
        assert_eq!(v, 0.0);
        // Monotone non-increasing in m and rho inside the domain.
        let class = ContaminationClass::KSets { n: 60, k: 4 };
        let mut prev = f64::INFINITY;
        for m in [1u32, 2, 4, 8, 16, 64] {
            let v = nonadaptive_lower_bound(&class, 0.2, m, ModelKind::Normalized).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for i in 0..18 {
            let rho = i as f64 * 0.05;
            let v = nonadaptive_lower_bound(&class, rho, 4, ModelKind::Normalized).unwrap();
            assert!(v <= prev + 1e-15, "rho = {rho}");
            prev = v;
        }
    }

    #[test]
    fn h_function_and_inverse() {
        // Taylor: H(1+e) = e^2/2 + O(e^3).
        let eps = 1e-4;
        let h = h_function(1.0 + eps).unwrap();
        assert!((h - eps * eps / 2.0).abs() < 1e-10);
        assert_eq!(h_inverse(0.0).unwrap(), 1.0);
        for b in [1.01f64, 2.0, 10.0, 100.0] {
            let y = h_function(b).unwrap();
            let back = h_inverse(y).unwrap();
            assert!((back - b).abs() < 1e-9, "b = {b}, back = {back}");
        }
        assert!(h_function(1.0).is_err());
        assert!(h_inverse(-0.1).is_err());
    }

    #[test]
    fn equicorr_loglik_rho_zero_is_standard_normal() {
        let row = [0.3, -1.2, 0.7];
        for model in [ModelKind::Normalized, ModelKind::Unnormalized] {
            let ll = equicorr_loglik(&row, 0.0, model).unwrap();
            let expected: f64 = row
                .iter()
                .map(|x| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln())
                .sum();
            assert!((ll - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn equicorr_logdet_d3() {
        // Normalized d = 3, rho = 0.5: log det = 2 log(1/2) + log 2.
        let rho = 0.5f64;
        let expected = 2.0 * (0.5f64).ln() + (2.0f64).ln();
        let logdet = 2.0 * (1.0 - rho).ln() + (1.0 + 2.0 * rho).ln();
        assert!((logdet - expected).abs() < 1e-12);
    }

    /// The seven elementary inequalities hold on dense grids of their stated
    /// domains (unbounded sides truncated at generous endpoints).
    #[test]
    fn elementary_inequalities_hold() {
        use inequalities::*;
        let grid = |lo: f64, hi: f64| {
            (0..10_000).map(move |i| lo + (hi - lo) * (i as f64 + 0.5) / 10_000.0)
        };
        for x in grid(-1.0 + 1e-6, 50.0) {
            assert!(slack_log_one_plus(x) >= 0.0, "x = {x}");
        }
        for x in grid(1e-6, 50.0) {
            assert!(slack_chunk_upper(x) >= 0.0, "x = {x}");
        }
        for x in grid(1e-6, 0.5 - 1e-9) {
            assert!(slack_chunk_upper_reflected(x) >= 0.0, "x = {x}");
        }
        for x in grid(-50.0, 1.0 - 1e-9) {
            assert!(slack_chunk_upper_negated(x) >= 0.0, "x = {x}");
        }
        for x in grid(-1.0 + 1e-6, 1.0) {
            assert!(slack_chunk_lower(x) >= 0.0, "x = {x}");
        }
        for x in grid(1.0, 100.0) {
            assert!(slack_log_lower(x) >= 0.0, "x = {x}");
        }
        for x in grid(1e-2, 170.0) {
            assert!(slack_stirling(x) >= 0.0, "x = {x}");
        }
    }

    /// KL closed forms are non-decreasing in k (fixed rho) and in rho
    /// (fixed k >= 2).
    #[test]
    fn kl_monotonicity() {
        for i in 1..=18 {
            let rho = i as f64 * 0.05;
            let mut prev = -1.0;
            for k in 1..=128u32 {
                let v = kl_normalized(rho, k).unwrap();
                assert!(v >= prev - 1e-12, "normalized rho={rho} k={k}");
                prev = v;
                let u = kl_unnormalized(rho, k).unwrap();
                if k >= 2 {
                    assert!(u >= kl_unnormalized(rho, k - 1).unwrap() - 1e-12);
                }
            }
        }
        for k in [2u32, 3, 8, 64, 128] {
            let mut prev = -1.0;
            for i in 0..=18 {
                let rho = i as f64 * 0.05;
                let v = kl_normalized(rho, k).unwrap();
                assert!(v >= prev - 1e-12, "normalized k={k} rho={rho}");
                prev = v;
            }
        }
    }

    #[test]
    fn bound_report_serializes() {
        let class = ContaminationClass::KSets { n: 100, k: 10 };
        let report = bound_report(&class, 0.1, 5, ModelKind::Normalized).unwrap();
        assert_eq!(report.class_complexity, Some(50.0));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"schema_version\":1"));
    }
}
