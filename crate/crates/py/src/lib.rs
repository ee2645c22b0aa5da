//! Python bindings: the posterior surrogate with its sampling-based
//! epsilon-optimality machinery, the interval constructions, the
//! concentration diagnostics, and the benchmark objectives.

use prbopt::acquisition::{iskg_value, select_query, ISKGConfig};
use prbopt::bounds;
use prbopt::harness::Objective;
use prbopt::model::{
    fit_map, Dataset, FitConfig, GPHyperparams, HyperpriorSpec, KernelSpec, Link, PosteriorGP,
};
use prbopt::optim::OptimizerConfig;
use prbopt::pathwise::{build_feature_map, draw_path, DEFAULT_NUM_FEATURES};
use prbopt::regret::{draw_regret_indicator, estimate_psi, IncumbentMode, IntervalConfig};
use prbopt::seed::Seed;
use prbopt::seqtest::{
    clopper_pearson, decide_threshold, empirical_bernstein, jeffreys_interval, Decision,
    IntervalMethod, TestSchedule,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py_err(err: prbopt::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_link(name: &str) -> PyResult<Link> {
    match name {
        "identity" => Ok(Link::Identity),
        "logit" => Ok(Link::Logit),
        other => Err(PyValueError::new_err(format!("unknown link '{other}'"))),
    }
}

/// A Matern-5/2 Gaussian process conditioned on observations on the unit
/// hypercube.
#[pyclass]
struct Gp {
    inner: PosteriorGP,
}

#[pymethods]
impl Gp {
    #[new]
    #[pyo3(signature = (points, values, mean=0.0, variance=1.0, lengthscales=None, noise_variance=1e-6, link="identity"))]
    fn new(
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
        mean: f64,
        variance: f64,
        lengthscales: Option<Vec<f64>>,
        noise_variance: f64,
        link: &str,
    ) -> PyResult<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(1);
        let ls = lengthscales.unwrap_or_else(|| vec![0.5; dim]);
        let hyper = GPHyperparams::new(
            mean,
            KernelSpec::new(variance, ls).map_err(to_py_err)?,
            noise_variance,
            parse_link(link)?,
        )
        .map_err(to_py_err)?;
        let data = Dataset::new(points, values).map_err(to_py_err)?;
        Ok(Gp { inner: PosteriorGP::new(hyper, data).map_err(to_py_err)? })
    }

    /// MAP-fit hyperparameters under the broad hyperpriors, then condition.
    #[staticmethod]
    #[pyo3(signature = (points, values, link="identity", restarts=8, seed=0))]
    fn fit(
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
        link: &str,
        restarts: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let link = parse_link(link)?;
        let dim = points.first().map(|p| p.len()).unwrap_or(1);
        let data = Dataset::new(points, values).map_err(to_py_err)?;
        let latent: Result<Vec<f64>, _> =
            data.values().iter().map(|&y| link.forward(y)).collect();
        let prior =
            HyperpriorSpec::from_observations(&latent.map_err(to_py_err)?, dim).map_err(to_py_err)?;
        let cfg = FitConfig { restarts, ..Default::default() };
        let hyper = fit_map(&data, link, &prior, &cfg, Seed::new(seed)).map_err(to_py_err)?;
        Ok(Gp { inner: PosteriorGP::new(hyper, data).map_err(to_py_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn hyperparams<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let h = self.inner.hyperparams();
        let out = PyDict::new(py);
        out.set_item("mean", h.mean_constant)?;
        out.set_item("variance", h.kernel.variance)?;
        out.set_item("lengthscales", h.kernel.lengthscales.clone())?;
        out.set_item("noise_variance", h.noise_variance)?;
        Ok(out)
    }

    /// Posterior mean and variance at a point.
    fn mean_var(&self, x: Vec<f64>) -> (f64, f64) {
        self.inner.mean_var(&x)
    }

    /// Posterior covariance matrix over a list of points.
    fn cov(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.cov(&xs).map_err(to_py_err)?;
        Ok((0..xs.len()).map(|i| (0..xs.len()).map(|j| m[(i, j)]).collect()).collect())
    }

    /// Posterior-mean maximizer over the evaluated points.
    fn incumbent(&self) -> PyResult<Vec<f64>> {
        incumbent_point(&self.inner).map_err(to_py_err)
    }

    /// Evaluate one pathwise draw at the given points.
    #[pyo3(signature = (xs, seed=0, num_features=DEFAULT_NUM_FEATURES))]
    fn sample_path(&self, xs: Vec<Vec<f64>>, seed: u64, num_features: usize) -> PyResult<Vec<f64>> {
        let fmap = build_feature_map(&self.inner.hyperparams().kernel, num_features, Seed::new(seed))
            .map_err(to_py_err)?;
        let path = draw_path(&self.inner, &fmap, Seed::new(seed).child(1)).map_err(to_py_err)?;
        Ok(xs.iter().map(|x| path.eval(x)).collect())
    }

    /// Monte Carlo estimate of P(x is epsilon-optimal) with its interval.
    #[pyo3(signature = (x, epsilon, draws=200, seed=0, num_features=DEFAULT_NUM_FEATURES))]
    fn psi<'py>(
        &self,
        py: Python<'py>,
        x: Vec<f64>,
        epsilon: f64,
        draws: u64,
        seed: u64,
        num_features: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let root = Seed::new(seed);
        let fmap = build_feature_map(&self.inner.hyperparams().kernel, num_features, root.child(0))
            .map_err(to_py_err)?;
        let cfg = OptimizerConfig::light(self.inner.dim());
        let est = estimate_psi(
            &self.inner,
            &fmap,
            &x,
            epsilon,
            draws,
            IntervalConfig::default(),
            &cfg,
            root.child(1),
        )
        .map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item("mean", est.mean)?;
        out.set_item("draws", est.num_draws)?;
        out.set_item("successes", est.successes)?;
        out.set_item("interval", (est.interval.lo, est.interval.hi))?;
        Ok(out)
    }

    /// Adaptive sequential decision: is P(x is epsilon-optimal) at least
    /// 1 - delta_mod? Returns the decision with its audit trail.
    #[pyo3(signature = (x, epsilon, delta_mod=0.025, delta_est_step=0.005, cap=1000, seed=0, num_features=DEFAULT_NUM_FEATURES))]
    #[allow(clippy::too_many_arguments)]
    fn decide<'py>(
        &self,
        py: Python<'py>,
        x: Vec<f64>,
        epsilon: f64,
        delta_mod: f64,
        delta_est_step: f64,
        cap: u64,
        seed: u64,
        num_features: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let root = Seed::new(seed);
        let fmap = build_feature_map(&self.inner.hyperparams().kernel, num_features, root.child(0))
            .map_err(to_py_err)?;
        let cfg = OptimizerConfig::light(self.inner.dim());
        let schedule = TestSchedule {
            hard_cap: (cap > 0).then_some(cap),
            ..TestSchedule::with_defaults(delta_est_step).map_err(to_py_err)?
        };
        let outcome = decide_threshold(
            |i| {
                draw_regret_indicator(&self.inner, &fmap, &x, epsilon, &cfg, root.child(2).child(i))
                    .map(|d| d.indicator)
            },
            1.0 - delta_mod,
            &schedule,
            IntervalMethod::ClopperPearson,
        )
        .map_err(to_py_err)?;
        let out = PyDict::new(py);
        out.set_item(
            "decision",
            match outcome.decision {
                Decision::Above => "above",
                Decision::Below => "below",
                Decision::InconclusiveCapped => "inconclusive_capped",
            },
        )?;
        out.set_item("mean", outcome.estimate.mean)?;
        out.set_item("draws_used", outcome.draws_used)?;
        out.set_item("rounds", outcome.rounds)?;
        out.set_item("guaranteed", outcome.guaranteed)?;
        out.set_item(
            "interval",
            (outcome.estimate.interval.lo, outcome.estimate.interval.hi),
        )?;
        Ok(out)
    }

    /// In-sample Knowledge Gradient value at a point.
    fn acquisition_value(&self, x: Vec<f64>) -> PyResult<f64> {
        iskg_value(&self.inner, &x, &ISKGConfig::default()).map_err(to_py_err)
    }

    /// Next query proposed by maximizing the acquisition.
    #[pyo3(signature = (seed=0))]
    fn next_query(&self, seed: u64) -> PyResult<Vec<f64>> {
        let mut cfg = ISKGConfig::default();
        cfg.optimizer = OptimizerConfig::light(self.inner.dim());
        select_query(&self.inner, &cfg, Seed::new(seed)).map_err(to_py_err)
    }
}

fn incumbent_point(gp: &PosteriorGP) -> prbopt::Result<Vec<f64>> {
    prbopt::regret::incumbent(
        gp,
        IncumbentMode::EvaluatedOnly,
        &OptimizerConfig::light(gp.dim()),
        Seed::new(0),
    )
}

/// Benchmark objectives on the unit cube (maximization convention).
#[pyclass]
struct Benchmark {
    inner: Objective,
}

#[pymethods]
impl Benchmark {
    #[new]
    #[pyo3(signature = (name, dim=2, noise_variance=0.0, seed=0))]
    fn new(name: &str, dim: usize, noise_variance: f64, seed: u64) -> PyResult<Self> {
        let inner =
            prbopt::harness::objective_by_name(name, dim, noise_variance, Seed::new(seed))
                .map_err(to_py_err)?;
        Ok(Benchmark { inner })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn optimum(&self) -> f64 {
        self.inner.optimum()
    }

    fn __call__(&self, x: Vec<f64>) -> f64 {
        self.inner.latent(&x)
    }

    fn is_eps_optimal(&self, x: Vec<f64>, epsilon: f64) -> bool {
        self.inner.is_eps_optimal(&x, epsilon)
    }
}

#[pyfunction]
fn clopper_pearson_interval(k: u64, n: u64, delta: f64) -> PyResult<(f64, f64)> {
    clopper_pearson(k, n, delta).map(|ci| (ci.lo, ci.hi)).map_err(to_py_err)
}

#[pyfunction]
fn jeffreys_interval_py(k: u64, n: u64, delta: f64) -> PyResult<(f64, f64)> {
    jeffreys_interval(k, n, delta).map(|ci| (ci.lo, ci.hi)).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (values, lo=0.0, hi=1.0, delta=0.05))]
fn empirical_bernstein_interval(
    values: Vec<f64>,
    lo: f64,
    hi: f64,
    delta: f64,
) -> PyResult<(f64, f64)> {
    empirical_bernstein(&values, (lo, hi), delta).map(|ci| (ci.lo, ci.hi)).map_err(to_py_err)
}

#[pyfunction]
fn borell_tis_tail(epsilon: f64, expected_sup: f64, sigma_max: f64) -> PyResult<f64> {
    bounds::borell_tis_tail(epsilon, expected_sup, sigma_max).map_err(to_py_err)
}

#[pyfunction]
fn expected_sup_bound(sigma: f64, dim: usize, lipschitz: f64, cube_edge: f64) -> PyResult<f64> {
    bounds::expected_sup_bound(sigma, dim, lipschitz, cube_edge).map_err(to_py_err)
}

#[pyfunction]
fn variance_contraction_bound(
    prior_var: f64,
    lipschitz: f64,
    noise_variance: f64,
    eps_cov: f64,
    dim: usize,
) -> PyResult<f64> {
    bounds::variance_contraction_bound(prior_var, lipschitz, noise_variance, eps_cov, dim)
        .map_err(to_py_err)
}

#[pymodule]
fn prbopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Gp>()?;
    m.add_class::<Benchmark>()?;
    m.add_function(wrap_pyfunction!(clopper_pearson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(jeffreys_interval_py, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_bernstein_interval, m)?)?;
    m.add_function(wrap_pyfunction!(borell_tis_tail, m)?)?;
    m.add_function(wrap_pyfunction!(expected_sup_bound, m)?)?;
    m.add_function(wrap_pyfunction!(variance_contraction_bound, m)?)?;
    Ok(())
}
