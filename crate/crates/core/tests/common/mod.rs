//! Shared oracles for the integration suites: dense-covariance Gaussian KL,
//! chi-square KL by quadrature, and a Kolmogorov-Smirnov helper. These stay
//! independent of the crate's closed-form code paths.

#![allow(dead_code)]

use nalgebra::DMatrix;

use corrsense::model::{ModelKind, ProblemInstance};

/// The contaminated covariance block of size `k`.
pub fn dense_block(rho: f64, k: usize, model: ModelKind) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            match model {
                ModelKind::Normalized => 1.0,
                ModelKind::Unnormalized => 1.0 + rho,
            }
        } else {
            rho
        }
    })
}

/// KL(N(0, I_k) || N(0, sigma)) via explicit inverse and log-determinant.
pub fn dense_gaussian_kl(sigma: &DMatrix<f64>) -> f64 {
    let k = sigma.nrows();
    let inv = sigma.clone().try_inverse().expect("block is invertible");
    let det = sigma.determinant();
    0.5 * (inv.trace() - k as f64 + det.ln())
}

/// Dense log-density of N(0, sigma) at a row.
pub fn dense_gaussian_loglik(sigma: &DMatrix<f64>, row: &[f64]) -> f64 {
    let k = sigma.nrows();
    let inv = sigma.clone().try_inverse().expect("block is invertible");
    let x = nalgebra::DVector::from_column_slice(row);
    let quad = (x.transpose() * &inv * &x)[(0, 0)];
    -0.5 * quad
        - 0.5 * sigma.determinant().ln()
        - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// KL(chi^2_1 || (1+rho) chi^2_1) by composite Simpson quadrature after the
/// substitution x = u^2, which removes the x^{-1/2} singularity:
/// integral of sqrt(2/pi) e^{-u^2/2} [log(1+rho)/2 - u^2 rho / (2(1+rho))].
pub fn chi2_scale_kl_quadrature(rho: f64) -> f64 {
    let integrand = |u: f64| -> f64 {
        let weight = (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * u * u).exp();
        weight * (0.5 * (1.0 + rho).ln() - u * u * rho / (2.0 * (1.0 + rho)))
    };
    let (a, b, steps) = (0.0, 14.0, 40_000usize);
    let h = (b - a) / steps as f64;
    let mut acc = integrand(a) + integrand(b);
    for i in 1..steps {
        let x = a + i as f64 * h;
        acc += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Two-sided KS p-value against a continuous CDF (asymptotic Kolmogorov
/// distribution with the Stephens small-sample correction).
pub fn ks_test_p_value(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Empirical covariance entry (i, j) from row samples.
pub fn empirical_cov(rows: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let n = rows.len() as f64;
    rows.iter().map(|r| r[i] * r[j]).sum::<f64>() / n
}

/// Standard error of the empirical covariance entry under normality.
pub fn cov_se(instance: &ProblemInstance, i: u32, j: u32, n_samples: usize) -> f64 {
    let sii = instance.covariance_entry(i, i).unwrap();
    let sjj = instance.covariance_entry(j, j).unwrap();
    let sij = instance.covariance_entry(i, j).unwrap();
    ((sii * sjj + sij * sij) / n_samples as f64).sqrt()
}
