//! Model-based regret simulation: Bernoulli indicators 1(r_t(x) <= eps)
//! drawn by maximizing posterior sample paths, their Monte Carlo aggregate
//! with a confidence interval, closed-form alternative estimators, and
//! candidate-set construction for the stopping rule.

use crate::error::{Error, Result};
use crate::model::{Link, PosteriorGP, SearchSpace};
use crate::optim::{self, DifferentiableFn, OptimizerConfig};
use crate::pathwise::{draw_path, FeatureMap, PathwiseSample};
use crate::seed::Seed;
use crate::seqtest::{interval_for_counts, BernoulliEstimate, IntervalMethod};
use crate::special::norm_cdf;
use serde::{Deserialize, Serialize};

/// Monte Carlo estimate of the probability that a point is epsilon-optimal.
pub type PsiEstimate = BernoulliEstimate;

/// One Bernoulli regret indicator. The witness certifies the gap whenever
/// the indicator is zero.
#[derive(Debug, Clone)]
pub struct RegretDraw {
    pub indicator: bool,
    pub witness: Option<Vec<f64>>,
    pub path_seed: Seed,
}

/// A sample path pulled through the observation link, so regret is measured
/// on the original scale. The identity link leaves values untouched.
pub struct LinkedPath<'a> {
    path: &'a PathwiseSample<'a>,
    link: Link,
}

impl<'a> LinkedPath<'a> {
    pub fn new(path: &'a PathwiseSample<'a>) -> Self {
        LinkedPath { path, link: path.posterior().hyperparams().link }
    }
}

impl DifferentiableFn for LinkedPath<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.link.inverse(self.path.eval(x))
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, mut g) = self.path.eval_with_grad(x);
        let scale = self.link.inverse_grad(v);
        for gi in g.iter_mut() {
            *gi *= scale;
        }
        (self.link.inverse(v), g)
    }
}

/// Draw one regret indicator: sample a path, then certify (or fail to
/// certify) a point beating x by more than epsilon.
pub fn draw_regret_indicator(
    gp: &PosteriorGP,
    fmap: &FeatureMap,
    x: &[f64],
    epsilon: f64,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<RegretDraw> {
    if epsilon <= 0.0 {
        return Err(Error::invalid(format!("regret bound must be positive, got {epsilon}")));
    }
    if !SearchSpace::new(gp.dim())?.contains(x) {
        return Err(Error::invalid("query point outside the unit cube"));
    }
    let path = draw_path(gp, fmap, seed)?;
    let linked = LinkedPath::new(&path);
    let gap = optim::exceeds_gap(&linked, x, epsilon, cfg, seed.child(2))?;
    Ok(RegretDraw { indicator: !gap.exceeded, witness: gap.witness, path_seed: seed })
}

/// Interval settings attached to Monte Carlo estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub method: IntervalMethod,
    pub delta: f64,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig { method: IntervalMethod::ClopperPearson, delta: 0.05 }
    }
}

/// Average n independent regret indicators under split seeds.
#[allow(clippy::too_many_arguments)]
pub fn estimate_psi(
    gp: &PosteriorGP,
    fmap: &FeatureMap,
    x: &[f64],
    epsilon: f64,
    n: u64,
    interval_cfg: IntervalConfig,
    cfg: &OptimizerConfig,
    root_seed: Seed,
) -> Result<PsiEstimate> {
    if n == 0 {
        return Err(Error::invalid("estimator needs at least one draw"));
    }
    let mut successes = 0u64;
    for i in 0..n {
        let draw = draw_regret_indicator(gp, fmap, x, epsilon, cfg, root_seed.child(i))?;
        if draw.indicator {
            successes += 1;
        }
    }
    Ok(PsiEstimate {
        mean: successes as f64 / n as f64,
        num_draws: n,
        successes,
        interval: interval_for_counts(successes, n, interval_cfg.delta, interval_cfg.method)?,
    })
}

/// Jointly sampled supremum/location pairs (f*, x*) from shared paths,
/// feeding the closed-form alternative estimators and the differentiable
/// candidate surrogate.
pub fn sample_joint_maxima(
    gp: &PosteriorGP,
    fmap: &FeatureMap,
    n: u64,
    cfg: &OptimizerConfig,
    root_seed: Seed,
) -> Result<Vec<(f64, Vec<f64>)>> {
    (0..n)
        .map(|i| {
            let seed = root_seed.child(i);
            let path = draw_path(gp, fmap, seed)?;
            let out = optim::maximize(&path, gp.dim(), cfg, seed.child(2))?;
            Ok((out.max, out.argmax))
        })
        .collect()
}

fn gaussian_prob_at_most(threshold: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        norm_cdf((threshold - mean) / sd)
    } else if mean < threshold {
        1.0
    } else if mean > threshold {
        0.0
    } else {
        0.5
    }
}

const TRUNCATION_FLOOR: f64 = 1e-12;

/// The three closed-form alternatives to joint sampling, averaged over the
/// given (f*, x*) draws and clamped to [0,1]:
/// - `marginal` integrates f(x) against each sampled supremum,
/// - `truncated` renormalizes the same quantity by P(f(x) <= f*),
/// - `conditioned` additionally conditions on f(x*) = f* via a rank-one
///   posterior update before truncating.
#[derive(Debug, Clone, Copy)]
pub struct PsiAlternatives {
    pub marginal: f64,
    pub truncated: f64,
    pub conditioned: f64,
}

pub fn psi_alternatives(
    gp: &PosteriorGP,
    x: &[f64],
    epsilon: f64,
    joint_draws: &[(f64, Vec<f64>)],
) -> Result<PsiAlternatives> {
    if joint_draws.is_empty() {
        return Err(Error::invalid("alternative estimators need at least one joint draw"));
    }
    if joint_draws.iter().any(|(f, _)| !f.is_finite()) {
        return Err(Error::invalid("sampled suprema must be finite"));
    }
    let (mu_x, var_x) = gp.mean_var(x);
    let sd_x = var_x.sqrt();

    let mut marginal = 0.0;
    let mut truncated = 0.0;
    let mut conditioned = 0.0;
    for (f_star, x_star) in joint_draws {
        // Marginal: P(f(x) >= f* - eps) under the unconditioned posterior.
        marginal += 1.0 - gaussian_prob_at_most(f_star - epsilon, mu_x, sd_x);

        if var_x <= 0.0 {
            return Err(Error::DegenerateData("conditioned variance zero".into()));
        }
        // Truncated: renormalize by the mass below the supremum.
        let below_star = gaussian_prob_at_most(*f_star, mu_x, sd_x);
        let below_gap = gaussian_prob_at_most(f_star - epsilon, mu_x, sd_x);
        truncated += ((below_star - below_gap) / below_star.max(TRUNCATION_FLOOR)).clamp(0.0, 1.0);

        // Conditioned: rank-one update on f(x*) = f*, then the probability
        // of landing within epsilon of the supremum under the conditioned
        // Gaussian truncated below it.
        let cov = gp.cov(&[x.to_vec(), x_star.clone()])?;
        let (v_x, c_xs, v_s) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        if v_s <= 0.0 {
            return Err(Error::DegenerateData("conditioned variance zero".into()));
        }
        let mu_s = gp.mean(x_star);
        let mu_cond = mu_x + c_xs * (f_star - mu_s) / v_s;
        let var_cond = (v_x - c_xs * c_xs / v_s).max(0.0);
        if var_cond <= 0.0 {
            return Err(Error::DegenerateData("conditioned variance zero".into()));
        }
        let sd_cond = var_cond.sqrt();
        let below_star = norm_cdf((f_star - mu_cond) / sd_cond);
        let below_gap = norm_cdf((f_star - epsilon - mu_cond) / sd_cond);
        conditioned +=
            ((below_star - below_gap) / below_star.max(TRUNCATION_FLOOR)).clamp(0.0, 1.0);
    }
    let n = joint_draws.len() as f64;
    Ok(PsiAlternatives {
        marginal: (marginal / n).clamp(0.0, 1.0),
        truncated: (truncated / n).clamp(0.0, 1.0),
        conditioned: (conditioned / n).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncumbentMode {
    EvaluatedOnly,
    WholeSpace,
}

/// Posterior mean as a differentiable field.
pub struct PosteriorMeanFn<'a>(pub &'a PosteriorGP);

impl DifferentiableFn for PosteriorMeanFn<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.mean(x)
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (m, _, gm, _) = self.0.mean_var_grad(x);
        (m, gm)
    }
}

/// Preferred solution: the posterior-mean maximizer over the evaluated
/// points (ties to the lowest index) or over the whole cube.
pub fn incumbent(
    gp: &PosteriorGP,
    mode: IncumbentMode,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<Vec<f64>> {
    match mode {
        IncumbentMode::EvaluatedOnly => {
            if gp.is_empty() {
                return Err(Error::invalid("no evaluated points to pick an incumbent from"));
            }
            let means = gp.mean_at_data();
            let mut best = 0;
            for (i, m) in means.iter().enumerate() {
                if *m > means[best] {
                    best = i;
                }
            }
            Ok(gp.data().points()[best].clone())
        }
        IncumbentMode::WholeSpace => {
            Ok(optim::maximize(&PosteriorMeanFn(gp), gp.dim(), cfg, seed)?.argmax)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    InSampleFilter,
    SurrogateOptimized,
    IncumbentOnly,
}

/// Candidate solutions the stopping rule will test, deduplicated.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub points: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

fn dedup_points(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let dup = kept.iter().any(|q| {
            p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max) <= 1e-9
        });
        if !dup {
            kept.push(p);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    InSample,
    Surrogate,
}

/// Build the candidate set.
///
/// In-sample mode keeps evaluated points whose chance of being within
/// epsilon of the incumbent (a pairwise Gaussian probability under the
/// posterior) is at least 1 - delta_mod; the incumbent itself always stays.
/// Surrogate mode maximizes the averaged conditioned closed form over the
/// cube and returns the optimum alongside the whole-space incumbent.
pub fn candidate_set(
    gp: &PosteriorGP,
    epsilon: f64,
    delta_mod: f64,
    mode: CandidateMode,
    fmap: &FeatureMap,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<CandidateSet> {
    match mode {
        CandidateMode::InSample => {
            if gp.is_empty() {
                return Err(Error::invalid("in-sample candidates need at least one observation"));
            }
            let means = gp.mean_at_data();
            let mut best = 0;
            for (i, m) in means.iter().enumerate() {
                if *m > means[best] {
                    best = i;
                }
            }
            let cov = gp.cov(gp.data().points())?;
            let mut points = vec![gp.data().points()[best].clone()];
            for (i, p) in gp.data().points().iter().enumerate() {
                if i == best {
                    continue;
                }
                let mean_gap = means[best] - means[i];
                let var_gap = (cov[(best, best)] - 2.0 * cov[(best, i)] + cov[(i, i)]).max(0.0);
                let prob = gaussian_prob_at_most(epsilon, mean_gap, var_gap.sqrt());
                if prob >= 1.0 - delta_mod {
                    points.push(p.clone());
                }
            }
            let points = dedup_points(points);
            let provenance = if points.len() == 1 {
                Provenance::IncumbentOnly
            } else {
                Provenance::InSampleFilter
            };
            Ok(CandidateSet { points, provenance })
        }
        CandidateMode::Surrogate => {
            let joint = sample_joint_maxima(gp, fmap, 32, cfg, seed.child(0))?;
            let surrogate = optim::CentralDiff::new(|x: &[f64]| {
                psi_alternatives(gp, x, epsilon, &joint)
                    .map(|alt| alt.conditioned)
                    .unwrap_or(f64::NEG_INFINITY)
            });
            let top = optim::maximize(&surrogate, gp.dim(), cfg, seed.child(1))?.argmax;
            let s_t = incumbent(gp, IncumbentMode::WholeSpace, cfg, seed.child(2))?;
            Ok(CandidateSet {
                points: dedup_points(vec![top, s_t]),
                provenance: Provenance::SurrogateOptimized,
            })
        }
    }
}
