//! Shared oracles for the integration suites: exact location-scale path
//! sampling on a dense grid, independent of the feature-based machinery it
//! checks.

use nalgebra::{Cholesky, DMatrix, DVector};
use prbopt::model::{Dataset, GPHyperparams, KernelSpec, Link, PosteriorGP};
use prbopt::seed::Seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn grid_1d(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

/// Exact draws of the posterior restricted to a grid, via Cholesky
/// location-scale sampling.
pub struct GridOracle {
    pub grid: Vec<Vec<f64>>,
    means: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GridOracle {
    pub fn new(gp: &PosteriorGP, grid: Vec<Vec<f64>>) -> Self {
        let mut cov = gp.cov(&grid).expect("grid covariance");
        for i in 0..grid.len() {
            cov[(i, i)] += 1e-8;
        }
        let means = DVector::from_iterator(grid.len(), grid.iter().map(|x| gp.mean_var(x).0));
        let chol = Cholesky::new(cov).expect("grid covariance is PD with jitter");
        GridOracle { grid, means, chol }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_iterator(self.grid.len(), (0..self.grid.len()).map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v
        }));
        &self.means + self.chol.l() * z
    }

    /// Monte Carlo estimate of P(max f - f(x_j) <= eps) at the given grid
    /// indices, sharing draws across indices.
    pub fn psi(&self, indices: &[usize], epsilon: f64, draws: u32, seed: Seed) -> Vec<f64> {
        let mut rng = seed.rng();
        let mut hits = vec![0u32; indices.len()];
        for _ in 0..draws {
            let f = self.sample(&mut rng);
            let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (slot, &j) in hits.iter_mut().zip(indices) {
                if best - f[j] <= epsilon {
                    *slot += 1;
                }
            }
        }
        hits.iter().map(|h| f64::from(*h) / f64::from(draws)).collect()
    }

    /// Mean and max-over-grid statistics of the supremum across draws.
    pub fn sup_stats(&self, draws: u32, seed: Seed) -> (f64, f64) {
        let mut rng = seed.rng();
        let mut total = 0.0;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..draws {
            let f = self.sample(&mut rng);
            let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += best;
            hi = hi.max(best);
        }
        (total / f64::from(draws), hi)
    }
}

/// A 1D posterior with `t` noisy observations of a smooth function,
/// mirroring the eight-observation illustration fixture.
pub fn smooth_1d_gp(t: usize, noise: f64, lengthscale: f64, seed: u64) -> PosteriorGP {
    let mut rng = Seed::new(seed).rng();
    let points: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random::<f64>()]).collect();
    let values: Vec<f64> = points
        .iter()
        .map(|p| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            (5.0 * p[0]).sin() + 0.8 * (2.5 * p[0]).cos() + noise.sqrt() * eps
        })
        .collect();
    let hyper = GPHyperparams::new(
        0.0,
        KernelSpec::isotropic(1.0, lengthscale, 1).unwrap(),
        noise,
        Link::Identity,
    )
    .unwrap();
    PosteriorGP::new(hyper, Dataset::new(points, values).unwrap()).unwrap()
}

/// Builds the gram matrix of a kernel over a grid (prior, zero mean) and
/// returns exact prior draws' supremum mean.
pub fn prior_sup_mean(
    kernel: &KernelSpec,
    grid: &[Vec<f64>],
    draws: u32,
    seed: Seed,
) -> f64 {
    let n = grid.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&grid[i], &grid[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
        gram[(i, i)] += 1e-10;
    }
    let chol = Cholesky::new(gram).expect("prior gram is PD with jitter");
    let mut rng = seed.rng();
    let mut total = 0.0;
    for _ in 0..draws {
        let z = DVector::from_iterator(n, (0..n).map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        }));
        let f = chol.l() * z;
        total += f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    total / f64::from(draws)
}
