//! Shared special-function helpers: normal CDF, beta quantiles, and
//! Gauss-Hermite rules for expectations under a standard normal.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quantile of the Beta(a, b) distribution: the x with I_x(a, b) = p.
///
/// Bisection brackets the root, then Newton steps polish it; accuracy is
/// better than 1e-10 on the quantile.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid(format!("beta parameters must be positive, got ({a}, {b})")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile level must lie in [0,1], got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);

    // Newton polish; the bisection bracket guards against overshoot.
    let ln_b = ln_beta(a, b);
    for _ in 0..8 {
        let f = beta_reg(a, b, x) - p;
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b;
        let step = f / ln_pdf.exp();
        if !step.is_finite() {
            break;
        }
        let next = (x - step).clamp(lo, hi);
        if (next - x).abs() < 1e-15 {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Nodes and probability weights for E[h(Z)] with Z ~ N(0, 1):
/// E[h(Z)] ~= sum_i w_i h(z_i), weights summing to one.
///
/// Built by the Golub-Welsch eigenvalue construction on the Hermite
/// recurrence; probability weights are the squared first eigenvector
/// components, so no explicit normalization is needed.
pub fn gauss_hermite_normal(n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 1 {
        return Err(Error::invalid("quadrature rule needs at least one node"));
    }
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = jacobi.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = std::f64::consts::SQRT_2 * eig.eigenvalues[i];
            let weight = eig.eigenvectors[(0, i)].powi(2);
            (node, weight)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rule)
}
