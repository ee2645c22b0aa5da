//! Computable concentration diagnostics: the Borell-TIS tail on the
//! supremum of a centered process, an expected-supremum bound from metric
//! entropy, a posterior variance-contraction bound on covered spaces, and
//! the fill distance / canonical pseudo-metric they are stated in.

use crate::error::{Error, Result};
use crate::model::PosteriorGP;
use serde::{Deserialize, Serialize};

/// Everything the tail diagnostics consume, gathered in one place for
/// reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub expected_sup: f64,
    pub sigma_max: f64,
    pub lipschitz_k: f64,
    pub dim: usize,
    pub cube_edge: f64,
    pub cover_radius: f64,
    pub noise_variance: f64,
}

/// Tail bound P(sup g >= eps) <= exp(-[(eps - E sup g) / (2 sigma)]^2 / 2)
/// for a centered process whose pointwise variance never exceeds
/// 4 sigma^2. Returns 1 at the eps = E sup g boundary.
pub fn borell_tis_tail(epsilon: f64, expected_sup: f64, sigma_max: f64) -> Result<f64> {
    if sigma_max <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if epsilon < expected_sup {
        return Err(Error::invalid(format!(
            "tail bound needs epsilon ({epsilon}) >= expected supremum ({expected_sup})"
        )));
    }
    let z = (epsilon - expected_sup) / (2.0 * sigma_max);
    Ok((-0.5 * z * z).exp())
}

/// Expected-supremum bound 12 sigma sqrt(2D + D log(1 + 4 L r / sigma^2))
/// for a centered process with Lipschitz covariance on [0, r]^D.
pub fn expected_sup_bound(sigma: f64, dim: usize, lipschitz: f64, cube_edge: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if lipschitz < 0.0 || cube_edge < 0.0 {
        return Err(Error::invalid("Lipschitz constant and edge length must be nonnegative"));
    }
    let d = dim as f64;
    let log_term = (1.0 + 4.0 * lipschitz * cube_edge / (sigma * sigma)).ln();
    Ok(12.0 * sigma * (2.0 * d + d * log_term).sqrt())
}

/// The printed contraction ratio in terms of a ball radius rho and a
/// cardinality lower bound eta.
pub(crate) fn contraction_ratio(
    prior_var: f64,
    lipschitz: f64,
    noise_variance: f64,
    rho: f64,
    eta: f64,
) -> f64 {
    let numer = (4.0 * lipschitz * rho * prior_var - lipschitz * lipschitz * rho * rho) * eta
        + noise_variance * prior_var;
    let denom = (prior_var + 2.0 * lipschitz * rho) * eta + noise_variance;
    (numer / denom).clamp(0.0, prior_var)
}

/// Posterior-variance bound kappa_eps for data generating an eps-cover of
/// the cube, with rho(eps) = eps^eps and eta(eps) = max(1, rho/(4 eps))^D.
pub fn variance_contraction_bound(
    prior_var: f64,
    lipschitz: f64,
    noise_variance: f64,
    eps_cov: f64,
    dim: usize,
) -> Result<f64> {
    if lipschitz <= 0.0 {
        return Err(Error::invalid("Lipschitz constant must be positive"));
    }
    if eps_cov <= 0.0 {
        return Err(Error::invalid("cover radius must be positive"));
    }
    if eps_cov > (prior_var / lipschitz).min(1.0) {
        return Err(Error::invalid("cover radius too large"));
    }
    let rho = eps_cov.powf(eps_cov);
    let eta = (rho / (4.0 * eps_cov)).max(1.0).powi(dim as i32);
    Ok(contraction_ratio(prior_var, lipschitz, noise_variance, rho, eta))
}

/// Grid-approximate fill distance max_x min_i |x - x_i|_inf on the unit
/// cube; exact as the resolution grows. Diagnostic only, so D <= 3.
pub fn fill_distance(points: &[Vec<f64>], grid_resolution: usize) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("fill distance needs at least one point"));
    }
    if grid_resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2 per dimension"));
    }
    let dim = points[0].len();
    if dim > 3 {
        return Err(Error::invalid("fill distance diagnostic is restricted to D <= 3"));
    }
    let steps = grid_resolution;
    let total = steps.pow(dim as u32);
    let mut worst = 0.0_f64;
    let mut node = vec![0.0_f64; dim];
    for idx in 0..total {
        let mut rem = idx;
        for d in 0..dim {
            node[d] = (rem % steps) as f64 / (steps - 1) as f64;
            rem /= steps;
        }
        let nearest = points
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&node)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Canonical pseudo-metric d_k(x, x') = sqrt(k_t(x,x) - 2 k_t(x,x') +
/// k_t(x',x')) under the posterior, clamped at zero.
pub fn pseudo_metric(gp: &PosteriorGP, x: &[f64], y: &[f64]) -> Result<f64> {
    let cov = gp.cov(&[x.to_vec(), y.to_vec()])?;
    Ok((cov[(0, 0)] - 2.0 * cov[(0, 1)] + cov[(1, 1)]).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GPHyperparams, KernelSpec, Link};
    use crate::seed::Seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn tail_bound_boundary_and_decay() {
        assert_abs_diff_eq!(borell_tis_tail(0.5, 0.5, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(borell_tis_tail(1.0, 0.0, 1e-12).unwrap() < 1e-300);
        // (eps - E) = 1, sigma = 0.5 -> exp(-1/2).
        assert_abs_diff_eq!(
            borell_tis_tail(1.5, 0.5, 0.5).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-12
        );
        assert!(borell_tis_tail(0.4, 0.5, 1.0).is_err());
    }

    #[test]
    fn expected_sup_bound_reference_values() {
        // Vanishing Lipschitz term: 12 sqrt(2).
        let v = expected_sup_bound(1.0, 1, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 12.0 * 2.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 16.97, epsilon = 0.01);
        // Linearity in sigma when L = 0.
        assert_abs_diff_eq!(
            expected_sup_bound(2.0, 1, 0.0, 1.0).unwrap(),
            2.0 * v,
            epsilon = 1e-12
        );
        // Independent re-evaluation at sigma=0.1, D=2, L=1, r=1.
        let sigma: f64 = 0.1;
        let expected =
            12.0 * sigma * (2.0 * 2.0 + 2.0 * (1.0 + 4.0 / (sigma * sigma)).ln()).sqrt();
        assert_abs_diff_eq!(
            expected_sup_bound(sigma, 2, 1.0, 1.0).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn contraction_single_observation_limit() {
        // rho -> 0 with eta = 1 recovers gamma^2 k / (k + gamma^2).
        let (k, gamma2) = (0.8, 0.05);
        let kappa = contraction_ratio(k, 1.0, gamma2, 1e-13, 1.0);
        assert_abs_diff_eq!(kappa, gamma2 * k / (k + gamma2), epsilon = 1e-10);
    }

    #[test]
    fn contraction_reference_value() {
        let kappa = variance_contraction_bound(1.0, 1.0, 0.01, 0.01, 1).unwrap();
        assert_abs_diff_eq!(kappa, 0.999, epsilon = 1e-3);
    }

    #[test]
    fn contraction_never_exceeds_prior_variance() {
        let mut rng = Seed::new(4).rng();
        for _ in 0..200 {
            let k: f64 = rng.random_range(0.1..3.0);
            let lipschitz: f64 = rng.random_range(0.1..5.0);
            let gamma2: f64 = rng.random_range(0.0..0.5);
            let eps_max = (k / lipschitz).min(1.0);
            let eps = rng.random_range(0.0..1.0) * eps_max;
            if eps <= 0.0 {
                continue;
            }
            let dim = rng.random_range(1..4usize);
            let kappa = variance_contraction_bound(k, lipschitz, gamma2, eps, dim).unwrap();
            assert!((0.0..=k).contains(&kappa));
        }
    }

    #[test]
    fn contraction_rejects_oversized_cover() {
        assert!(matches!(
            variance_contraction_bound(0.5, 1.0, 0.01, 0.9, 1),
            Err(Error::InvalidInput(msg)) if msg.contains("too large")
        ));
    }

    #[test]
    fn fill_distance_center_point() {
        let h = fill_distance(&[vec![0.5, 0.5]], 41).unwrap();
        assert_abs_diff_eq!(h, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fill_distance_guards() {
        assert!(fill_distance(&[], 10).is_err());
        assert!(fill_distance(&[vec![0.1; 4]], 10).is_err());
        assert!(fill_distance(&[vec![0.1]], 1).is_err());
    }

    fn toy_gp(points: Vec<Vec<f64>>, values: Vec<f64>) -> PosteriorGP {
        let hyper = GPHyperparams::new(
            0.0,
            KernelSpec::isotropic(1.0, 0.3, 1).unwrap(),
            1e-3,
            Link::Identity,
        )
        .unwrap();
        PosteriorGP::new(hyper, Dataset::new(points, values).unwrap()).unwrap()
    }

    #[test]
    fn pseudo_metric_vanishes_on_the_diagonal() {
        let gp = toy_gp(vec![vec![0.4]], vec![0.2]);
        assert_abs_diff_eq!(pseudo_metric(&gp, &[0.3], &[0.3]).unwrap(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn pseudo_metric_shrinks_under_conditioning() {
        let mut rng = Seed::new(6).rng();
        for _ in 0..25 {
            let t = rng.random_range(1..5usize);
            let points: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random::<f64>()]).collect();
            let values: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
            let before = toy_gp(points.clone(), values.clone());
            let mut pts = points;
            pts.push(vec![rng.random::<f64>()]);
            let mut vals = values;
            vals.push(rng.random_range(-1.0..1.0));
            let after = toy_gp(pts, vals);
            let (x, y) = (vec![rng.random::<f64>()], vec![rng.random::<f64>()]);
            let d0 = pseudo_metric(&before, &x, &y).unwrap();
            let d1 = pseudo_metric(&after, &x, &y).unwrap();
            assert!(d1 <= d0 + 1e-8);
        }
    }
}
