//! Approximate posterior function draws: a random-feature approximation of
//! the Matern-5/2 prior plus a Matheron data correction. Draws are cheap to
//! evaluate anywhere and differentiable, which is what lets regret
//! indicators be simulated by gradient-based search.

use crate::error::{Error, Result};
use crate::model::{KernelSpec, PosteriorGP};
use crate::optim::DifferentiableFn;
use crate::seed::Seed;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

pub const DEFAULT_NUM_FEATURES: usize = 2048;

/// Random cosine features whose inner products approximate the kernel.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    kernel: KernelSpec,
    num_features: usize,
    /// Row-major (num_features x dim) frequency matrix.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    scale: f64,
}

/// Sample a feature map from the Matern-5/2 spectral density: per feature,
/// omega = g * sqrt(5/u) / lengthscale with g ~ N(0, I) and u ~ chi^2_5.
pub fn build_feature_map(spec: &KernelSpec, num_features: usize, seed: Seed) -> Result<FeatureMap> {
    if num_features == 0 {
        return Err(Error::invalid("feature map needs at least one feature"));
    }
    let dim = spec.dim();
    let mut rng = seed.rng();
    let chi2 = ChiSquared::new(5.0).expect("valid chi-squared dof");
    let mut frequencies = Vec::with_capacity(num_features * dim);
    let mut phases = Vec::with_capacity(num_features);
    for _ in 0..num_features {
        let u: f64 = chi2.sample(&mut rng);
        let radial = (5.0 / u).sqrt();
        for d in 0..dim {
            let g: f64 = StandardNormal.sample(&mut rng);
            frequencies.push(g * radial / spec.lengthscales[d]);
        }
        phases.push(rng.random::<f64>() * std::f64::consts::TAU);
    }
    let scale = (2.0 * spec.variance / num_features as f64).sqrt();
    Ok(FeatureMap { kernel: spec.clone(), num_features, frequencies, phases, scale })
}

impl FeatureMap {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Feature vector phi(x); phi(x)^T phi(y) approximates k(x, y).
    pub fn basis(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        (0..self.num_features)
            .map(|i| {
                let row = &self.frequencies[i * dim..(i + 1) * dim];
                let arg: f64 =
                    row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.phases[i];
                self.scale * arg.cos()
            })
            .collect()
    }

    /// phi(x)^T w without allocating the basis.
    fn project(&self, x: &[f64], weights: &[f64]) -> f64 {
        let dim = self.dim();
        let mut acc = 0.0;
        for ((row, phase), weight) in
            self.frequencies.chunks_exact(dim).zip(&self.phases).zip(weights)
        {
            let arg: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + phase;
            acc += weight * arg.cos();
        }
        self.scale * acc
    }

    /// Value and gradient of phi(x)^T w in one pass.
    fn project_grad(&self, x: &[f64], weights: &[f64]) -> (f64, Vec<f64>) {
        let dim = self.dim();
        let mut acc = 0.0;
        let mut grad = vec![0.0; dim];
        for ((row, phase), weight) in
            self.frequencies.chunks_exact(dim).zip(&self.phases).zip(weights)
        {
            let arg: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + phase;
            let (sin, cos) = arg.sin_cos();
            acc += weight * cos;
            let coef = -weight * sin;
            for d in 0..dim {
                grad[d] += coef * row[d];
            }
        }
        for g in grad.iter_mut() {
            *g *= self.scale;
        }
        (self.scale * acc, grad)
    }
}

/// One approximate posterior draw, deterministic and differentiable once
/// constructed: eval(x) = c + phi(x)^T w + k(x, X_t) v.
#[derive(Debug)]
pub struct PathwiseSample<'a> {
    gp: &'a PosteriorGP,
    fmap: &'a FeatureMap,
    weights: Vec<f64>,
    correction: Vec<f64>,
    path_seed: Seed,
}

/// Draw a path: prior feature weights, a noise draw, and the Matheron
/// correction v = Lambda^{-1} (y - fhat(X_t) - eps).
pub fn draw_path<'a>(
    gp: &'a PosteriorGP,
    fmap: &'a FeatureMap,
    seed: Seed,
) -> Result<PathwiseSample<'a>> {
    if fmap.kernel() != &gp.hyperparams().kernel {
        return Err(Error::invalid(
            "feature map was built for a different kernel than the posterior",
        ));
    }
    let mut weight_rng = seed.child(0).rng();
    let weights: Vec<f64> =
        (0..fmap.num_features()).map(|_| StandardNormal.sample(&mut weight_rng)).collect();

    let t = gp.len();
    let correction = if t == 0 {
        Vec::new()
    } else {
        let mut noise_rng = seed.child(1).rng();
        let noise_sd = gp.hyperparams().noise_variance.sqrt();
        let c = gp.hyperparams().mean_constant;
        let residual = DVector::from_iterator(
            t,
            gp.data().points().iter().enumerate().map(|(i, p)| {
                let eps: f64 = StandardNormal.sample(&mut noise_rng);
                gp.latent_values()[i] - (c + fmap.project(p, &weights)) - noise_sd * eps
            }),
        );
        gp.solve_gram(&residual).iter().copied().collect()
    };
    Ok(PathwiseSample { gp, fmap, weights, correction, path_seed: seed })
}

impl PathwiseSample<'_> {
    pub fn seed(&self) -> Seed {
        self.path_seed
    }

    pub fn posterior(&self) -> &PosteriorGP {
        self.gp
    }

    /// Evaluate the draw at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut value =
            self.gp.hyperparams().mean_constant + self.fmap.project(x, &self.weights);
        let kernel = &self.gp.hyperparams().kernel;
        for (vi, p) in self.correction.iter().zip(self.gp.data().points()) {
            value += vi * kernel.eval(x, p);
        }
        value
    }

    /// Analytic gradient of the draw at a point.
    pub fn eval_grad(&self, x: &[f64]) -> Vec<f64> {
        self.eval_with_grad(x).1
    }

    pub fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (feat, mut grad) = self.fmap.project_grad(x, &self.weights);
        let mut value = self.gp.hyperparams().mean_constant + feat;
        let kernel = &self.gp.hyperparams().kernel;
        for (vi, p) in self.correction.iter().zip(self.gp.data().points()) {
            value += vi * kernel.eval(x, p);
            let gk = kernel.grad_x(x, p);
            for d in 0..x.len() {
                grad[d] += vi * gk[d];
            }
        }
        (value, grad)
    }
}

impl DifferentiableFn for PathwiseSample<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.eval_with_grad(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, GPHyperparams, Link};
    use approx::assert_abs_diff_eq;

    fn fixture_gp(noise: f64, t: usize, seed: u64) -> PosteriorGP {
        let mut rng = Seed::new(seed).rng();
        let points: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random::<f64>()]).collect();
        let values: Vec<f64> = points.iter().map(|p| (5.0 * p[0]).sin()).collect();
        let hyper = GPHyperparams::new(
            0.0,
            KernelSpec::isotropic(1.0, 0.3, 1).unwrap(),
            noise,
            Link::Identity,
        )
        .unwrap();
        PosteriorGP::new(hyper, Dataset::new(points, values).unwrap()).unwrap()
    }

    #[test]
    fn feature_products_approximate_the_kernel() {
        let spec = KernelSpec::isotropic(1.0, 0.3, 1).unwrap();
        let fmap = build_feature_map(&spec, 4096, Seed::new(1)).unwrap();
        let grid: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let bases: Vec<Vec<f64>> = grid.iter().map(|x| fmap.basis(x)).collect();
        let mut max_err = 0.0_f64;
        for (i, x) in grid.iter().enumerate() {
            for (j, y) in grid.iter().enumerate() {
                let approx: f64 = bases[i].iter().zip(&bases[j]).map(|(a, b)| a * b).sum();
                max_err = max_err.max((approx - spec.eval(x, y)).abs());
            }
        }
        assert!(max_err <= 0.03, "kernel approximation error {max_err}");
    }

    #[test]
    fn zero_variance_kernel_gives_zero_features() {
        let spec = KernelSpec::new(0.0, vec![0.5]).unwrap();
        let fmap = build_feature_map(&spec, 16, Seed::new(1)).unwrap();
        assert!(fmap.basis(&[0.4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_reproduces_the_map() {
        let spec = KernelSpec::isotropic(1.0, 0.5, 2).unwrap();
        let a = build_feature_map(&spec, 64, Seed::new(7)).unwrap();
        let b = build_feature_map(&spec, 64, Seed::new(7)).unwrap();
        assert_eq!(a.frequencies, b.frequencies);
        assert_eq!(a.phases, b.phases);
    }

    #[test]
    fn prior_draw_is_pure_feature_projection() {
        let hyper = GPHyperparams::new(
            0.7,
            KernelSpec::isotropic(1.0, 0.4, 1).unwrap(),
            0.0,
            Link::Identity,
        )
        .unwrap();
        let gp = PosteriorGP::new(hyper, Dataset::empty()).unwrap();
        let fmap = build_feature_map(&gp.hyperparams().kernel, 128, Seed::new(3)).unwrap();
        let path = draw_path(&gp, &fmap, Seed::new(5)).unwrap();
        let x = [0.3];
        let manual: f64 = fmap
            .basis(&x)
            .iter()
            .zip(&path.weights)
            .map(|(phi, w)| phi * w)
            .sum::<f64>()
            + 0.7;
        assert_abs_diff_eq!(path.eval(&x), manual, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_draws_interpolate_up_to_feature_error() {
        let gp = fixture_gp(0.0, 6, 11);
        let fmap = build_feature_map(&gp.hyperparams().kernel, 4096, Seed::new(2)).unwrap();

        // Feature-approximation error on a grid bounds the interpolation gap.
        let grid: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let bases: Vec<Vec<f64>> = grid.iter().map(|x| fmap.basis(x)).collect();
        let mut feature_err = 0.0_f64;
        for (i, x) in grid.iter().enumerate() {
            for (j, y) in grid.iter().enumerate() {
                let approx: f64 = bases[i].iter().zip(&bases[j]).map(|(a, b)| a * b).sum();
                feature_err =
                    feature_err.max((approx - gp.hyperparams().kernel.eval(x, y)).abs());
            }
        }

        for draw in 0..10 {
            let path = draw_path(&gp, &fmap, Seed::new(100 + draw)).unwrap();
            for (p, &y) in gp.data().points().iter().zip(gp.data().values()) {
                assert!(
                    (path.eval(p) - y).abs() <= 3.0 * feature_err,
                    "draw {draw} misses observation by {}",
                    (path.eval(p) - y).abs()
                );
            }
        }
    }

    #[test]
    fn mismatched_kernel_is_rejected() {
        let gp = fixture_gp(0.01, 3, 1);
        let other = KernelSpec::isotropic(2.0, 0.3, 1).unwrap();
        let fmap = build_feature_map(&other, 32, Seed::new(0)).unwrap();
        assert!(draw_path(&gp, &fmap, Seed::new(0)).is_err());
    }

    #[test]
    fn evaluation_is_pure() {
        let gp = fixture_gp(0.01, 4, 2);
        let fmap = build_feature_map(&gp.hyperparams().kernel, 256, Seed::new(4)).unwrap();
        let path = draw_path(&gp, &fmap, Seed::new(6)).unwrap();
        assert_eq!(path.eval(&[0.42]), path.eval(&[0.42]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let gp = fixture_gp(1e-3, 5, 8);
        let fmap = build_feature_map(&gp.hyperparams().kernel, 512, Seed::new(9)).unwrap();
        let mut rng = Seed::new(10).rng();
        for draw in 0..10 {
            let path = draw_path(&gp, &fmap, Seed::new(200 + draw)).unwrap();
            let x = [rng.random::<f64>() * 0.98 + 0.01];
            let grad = path.eval_grad(&x);
            let h = 1e-5;
            let fd = (path.eval(&[x[0] + h]) - path.eval(&[x[0] - h])) / (2.0 * h);
            assert_abs_diff_eq!(grad[0], fd, epsilon = 1e-4);
        }
    }

    #[test]
    fn moment_error_weakly_decreases_with_more_features() {
        let gp = fixture_gp(1e-2, 5, 21);
        let grid: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let cov = gp.cov(&grid).unwrap();
        let means: Vec<f64> = grid.iter().map(|x| gp.mean_var(x).0).collect();

        let moment_error = |m: usize| -> f64 {
            let fmap = build_feature_map(&gp.hyperparams().kernel, m, Seed::new(33)).unwrap();
            let draws = 2048;
            let mut sums = vec![0.0; grid.len()];
            let mut prods = vec![0.0; grid.len() * grid.len()];
            let root = Seed::new(77);
            for d in 0..draws {
                let path = draw_path(&gp, &fmap, root.child(d as u64)).unwrap();
                let vals: Vec<f64> = grid.iter().map(|x| path.eval(x)).collect();
                for i in 0..grid.len() {
                    sums[i] += vals[i];
                    for j in 0..grid.len() {
                        prods[i * grid.len() + j] += vals[i] * vals[j];
                    }
                }
            }
            let n = draws as f64;
            let mut err = 0.0_f64;
            for i in 0..grid.len() {
                let mi = sums[i] / n;
                err = err.max((mi - means[i]).abs());
                for j in 0..grid.len() {
                    let cij = prods[i * grid.len() + j] / n - mi * (sums[j] / n);
                    err = err.max((cij - cov[(i, j)]).abs());
                }
            }
            err
        };

        let coarse = moment_error(512);
        let fine = moment_error(4096);
        assert!(
            fine <= coarse + 0.02,
            "moment error grew with features: {coarse} -> {fine}"
        );
    }
}

