//! Benchmark objectives on the unit cube, all in maximization convention:
//! classic minimization test functions are negated, and draws from known
//! GP priors are materialized as fixed-seed feature paths.

use crate::error::{Error, Result};
use crate::model::KernelSpec;
use crate::optim::{self, CentralDiff, OptimizerConfig};
use crate::pathwise::{build_feature_map, FeatureMap, DEFAULT_NUM_FEATURES};
use crate::seed::Seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
enum ObjectiveKind {
    Branin,
    Hartmann3,
    Hartmann6,
    Rosenbrock4,
    GpDraw { fmap: FeatureMap, weights: Vec<f64> },
}

/// A benchmark problem: latent evaluator, known optimum, and a Gaussian
/// observation noise level.
#[derive(Debug, Clone)]
pub struct Objective {
    name: String,
    dim: usize,
    noise_variance: f64,
    optimum: f64,
    kind: ObjectiveKind,
}

fn branin_raw(x1: f64, x2: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let b = 5.1 / (4.0 * pi * pi);
    let c = 5.0 / pi;
    let t = 1.0 / (8.0 * pi);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

fn hartmann3_raw(x: &[f64]) -> f64 {
    let a = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
    let p = [
        [0.3689, 0.1170, 0.2673],
        [0.4699, 0.4387, 0.7470],
        [0.1091, 0.8732, 0.5547],
        [0.0381, 0.5743, 0.8828],
    ];
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..3).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

fn hartmann6_raw(x: &[f64]) -> f64 {
    let a = [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ];
    let p = [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ];
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..6).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

fn rosenbrock_raw(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

impl Objective {
    /// Branin on [-5,10] x [0,15], rescaled to the unit square and negated;
    /// three global maximizers at value -0.397887.
    pub fn branin() -> Self {
        Objective {
            name: "branin".into(),
            dim: 2,
            noise_variance: 0.0,
            optimum: -0.3978873577297384,
            kind: ObjectiveKind::Branin,
        }
    }

    pub fn hartmann3() -> Self {
        Objective {
            name: "hartmann3".into(),
            dim: 3,
            noise_variance: 0.0,
            optimum: 3.86278214782076,
            kind: ObjectiveKind::Hartmann3,
        }
    }

    pub fn hartmann6() -> Self {
        Objective {
            name: "hartmann6".into(),
            dim: 6,
            noise_variance: 0.0,
            optimum: 3.322368011391339,
            kind: ObjectiveKind::Hartmann6,
        }
    }

    /// Rosenbrock-4 on [-2.048, 2.048]^4, rescaled and negated; maximum 0
    /// at the all-ones point.
    pub fn rosenbrock4() -> Self {
        Objective {
            name: "rosenbrock4".into(),
            dim: 4,
            noise_variance: 0.0,
            optimum: 0.0,
            kind: ObjectiveKind::Rosenbrock4,
        }
    }

    /// A draw from the known prior: unit-variance Matern-5/2 with
    /// lengthscales sqrt(D)/4, materialized as a feature path. The optimum
    /// is located numerically once at construction.
    pub fn gp_draw(dim: usize, noise_variance: f64, seed: Seed) -> Result<Self> {
        let kernel = KernelSpec::isotropic(1.0, (dim as f64).sqrt() / 4.0, dim)?;
        let fmap = build_feature_map(&kernel, DEFAULT_NUM_FEATURES, seed.child(0))?;
        let mut rng = seed.child(1).rng();
        let weights: Vec<f64> =
            (0..fmap.num_features()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut obj = Objective {
            name: "gp".into(),
            dim,
            noise_variance,
            optimum: 0.0,
            kind: ObjectiveKind::GpDraw { fmap, weights },
        };
        let cfg = OptimizerConfig {
            random_search_points: 4096 * dim,
            num_starts: 16,
            grad_tol: 1e-8,
            max_iters: 300,
        };
        let field = CentralDiff::new(|x: &[f64]| obj.latent(x));
        obj.optimum = optim::maximize(&field, dim, &cfg, seed.child(2))?.max;
        Ok(obj)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn with_noise(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    /// The known maximum of the latent function.
    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// Noise-free objective value at a unit-cube point.
    pub fn latent(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim);
        match &self.kind {
            ObjectiveKind::Branin => {
                let x1 = 15.0 * u[0] - 5.0;
                let x2 = 15.0 * u[1];
                -branin_raw(x1, x2)
            }
            ObjectiveKind::Hartmann3 => -hartmann3_raw(u),
            ObjectiveKind::Hartmann6 => -hartmann6_raw(u),
            ObjectiveKind::Rosenbrock4 => {
                let x: Vec<f64> = u.iter().map(|v| 4.096 * v - 2.048).collect();
                -rosenbrock_raw(&x)
            }
            ObjectiveKind::GpDraw { fmap, weights } => fmap
                .basis(u)
                .iter()
                .zip(weights)
                .map(|(phi, w)| phi * w)
                .sum(),
        }
    }

    /// Noisy observation.
    pub fn observe(&self, u: &[f64], rng: &mut impl Rng) -> f64 {
        let eps: f64 = StandardNormal.sample(rng);
        self.latent(u) + self.noise_variance.sqrt() * eps
    }

    pub fn is_eps_optimal(&self, u: &[f64], epsilon: f64) -> bool {
        self.optimum - self.latent(u) <= epsilon
    }
}

/// The analytic benchmark set (GP draws are parameterized separately).
pub fn builtin_objectives() -> Vec<Objective> {
    vec![
        Objective::branin(),
        Objective::hartmann3(),
        Objective::hartmann6(),
        Objective::rosenbrock4(),
    ]
}

/// Look up an objective by CLI name.
pub fn objective_by_name(
    name: &str,
    dim: usize,
    noise_variance: f64,
    seed: Seed,
) -> Result<Objective> {
    let obj = match name {
        "branin" => Objective::branin(),
        "hartmann3" => Objective::hartmann3(),
        "hartmann6" => Objective::hartmann6(),
        "rosenbrock4" => Objective::rosenbrock4(),
        "gp" => return Objective::gp_draw(dim, noise_variance, seed),
        other => return Err(Error::invalid(format!("unknown objective '{other}'"))),
    };
    if obj.dim() != dim && dim != 0 {
        return Err(Error::invalid(format!(
            "objective '{name}' is {}-dimensional, got --dim {dim}",
            obj.dim()
        )));
    }
    Ok(obj.with_noise(noise_variance))
}
