//! Stopping rules over a per-step view of a BO run: the probabilistic
//! regret bound rule, plus the oracle, fixed-budget, acquisition-threshold,
//! confidence-bound-gap, and expected-supremum-change baselines.

use crate::error::{Error, Result};
use crate::model::{Link, PosteriorGP};
use crate::optim::{self, DifferentiableFn, OptimizerConfig};
use crate::pathwise::{build_feature_map, draw_path, DEFAULT_NUM_FEATURES};
use crate::regret::{
    candidate_set, draw_regret_indicator, CandidateMode, LinkedPath,
};
use crate::seed::Seed;
use crate::seqtest::{
    decide_threshold, make_schedule, IntervalMethod, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_HARD_CAP, DEFAULT_N0,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the estimation risk budget is spread over BO steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// Every step from `initial` to `budget` gets an equal share.
    ConstantOverBudget { budget: usize, initial: usize },
    /// Budget-free operation: geometrically spaced checkpoints t_i receive
    /// t_i^-alpha (alpha-1)/alpha of the budget; other steps are skipped.
    Geometric { alpha: f64, ratio: f64, first_check: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PRBParams {
    pub epsilon: f64,
    pub delta: f64,
    pub delta_mod: f64,
    pub delta_est: f64,
    pub schedule: StepSchedule,
    pub candidate_mode: CandidateMode,
    pub num_features: usize,
    pub interval: IntervalMethod,
    pub test_alpha: f64,
    pub test_beta: f64,
    pub test_n0: u64,
    pub hard_cap: Option<u64>,
}

impl PRBParams {
    /// Equal split of delta between model and estimation risk, constant
    /// schedule over the given budget.
    pub fn new(epsilon: f64, delta: f64, budget: usize, initial: usize) -> Result<Self> {
        let params = PRBParams {
            epsilon,
            delta,
            delta_mod: delta / 2.0,
            delta_est: delta / 2.0,
            schedule: StepSchedule::ConstantOverBudget { budget, initial },
            candidate_mode: CandidateMode::InSample,
            num_features: DEFAULT_NUM_FEATURES,
            interval: IntervalMethod::ClopperPearson,
            test_alpha: DEFAULT_ALPHA,
            test_beta: DEFAULT_BETA,
            test_n0: DEFAULT_N0,
            hard_cap: Some(DEFAULT_HARD_CAP),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("regret bound must be positive"));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::invalid("risk tolerance must lie in (0,1)"));
        }
        if self.delta_mod <= 0.0
            || self.delta_est <= 0.0
            || self.delta_mod + self.delta_est > self.delta + 1e-12
        {
            return Err(Error::invalid(
                "risk split must be positive with delta_mod + delta_est <= delta",
            ));
        }
        match self.schedule {
            StepSchedule::ConstantOverBudget { budget, initial } => {
                if budget <= initial {
                    return Err(Error::invalid("constant schedule needs budget > initial design"));
                }
            }
            StepSchedule::Geometric { alpha, ratio, first_check } => {
                if alpha <= 1.0 || ratio <= 1.0 || first_check == 0 {
                    return Err(Error::invalid(
                        "geometric schedule needs alpha > 1, ratio > 1, first_check >= 1",
                    ));
                }
            }
        }
        Ok(())
    }

    /// The stop level lambda = 1 - delta_mod.
    pub fn lambda(&self) -> f64 {
        1.0 - self.delta_mod
    }

    /// Estimation risk available at step t, or None when this step is not a
    /// checkpoint.
    pub fn delta_est_step(&self, t: usize) -> Option<f64> {
        match self.schedule {
            StepSchedule::ConstantOverBudget { budget, initial } => {
                Some(self.delta_est / (budget - initial) as f64)
            }
            StepSchedule::Geometric { alpha, ratio, first_check } => {
                let mut check = first_check as f64;
                let mut last = 0usize;
                loop {
                    let ti = check.ceil() as usize;
                    if ti > t {
                        return None;
                    }
                    if ti == t && ti != last {
                        let tf = t as f64;
                        return Some(tf.powf(-alpha) * (alpha - 1.0) / alpha * self.delta_est);
                    }
                    last = ti;
                    check *= ratio;
                }
            }
        }
    }
}

/// Everything a stopping rule may look at for one step of a run.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub gp: &'a PosteriorGP,
    pub t: usize,
    /// Acquisition value of the proposed next query, when recorded.
    pub acq_value: Option<f64>,
    /// True-objective information, available to oracle rules only.
    pub oracle: Option<OracleView<'a>>,
}

/// Latent true values of the queried points and the known optimum.
#[derive(Debug, Clone, Copy)]
pub struct OracleView<'a> {
    pub true_values: &'a [f64],
    pub optimum: f64,
}

/// Per-candidate outcome of one PRB evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrbCandidateReport {
    pub point: Vec<f64>,
    pub estimate: f64,
    pub draws_used: u64,
    pub guaranteed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleDiagnostics {
    Prb {
        evaluated: bool,
        lambda: f64,
        delta_est_step: Option<f64>,
        candidates: Vec<PrbCandidateReport>,
    },
    Acq {
        value: f64,
        cutoff: f64,
    },
    DeltaCb {
        ucb_max: f64,
        lcb_max: f64,
        gap: f64,
        cutoff: f64,
        beta_t: f64,
    },
    DeltaEs {
        expected_sup_prev: f64,
        expected_sup_curr: f64,
        change: f64,
        cutoff: f64,
        num_paths: u64,
        proxy: bool,
        degenerate_variance: bool,
    },
    Oracle {
        best_true_value: f64,
        optimum: f64,
    },
    Budget {
        budget: usize,
    },
}

/// A rule's verdict for one step; `returned_point` is present whenever
/// `stop` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopVerdict {
    pub stop: bool,
    pub returned_point: Option<Vec<f64>>,
    pub diagnostics: RuleDiagnostics,
}

fn evaluated_incumbent(gp: &PosteriorGP) -> Result<Vec<f64>> {
    if gp.is_empty() {
        return Err(Error::invalid("rule needs at least one evaluated point"));
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

/// The PRB rule: test every candidate's probability of being
/// epsilon-optimal with the adaptive sequential test, splitting the step's
/// risk budget across candidates; stop once the best estimate reaches
/// lambda = 1 - delta_mod.
pub fn prb_rule(
    view: &StepView,
    params: &PRBParams,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<StopVerdict> {
    params.validate()?;
    if view.gp.is_empty() {
        return Err(Error::invalid("PRB needs at least one evaluated point"));
    }
    let Some(delta_step) = params.delta_est_step(view.t) else {
        return Ok(StopVerdict {
            stop: false,
            returned_point: None,
            diagnostics: RuleDiagnostics::Prb {
                evaluated: false,
                lambda: params.lambda(),
                delta_est_step: None,
                candidates: Vec::new(),
            },
        });
    };

    let gp = view.gp;
    let fmap = build_feature_map(&gp.hyperparams().kernel, params.num_features, seed.child(0))?;
    let set = candidate_set(
        gp,
        params.epsilon,
        params.delta_mod,
        params.candidate_mode,
        &fmap,
        cfg,
        seed.child(1),
    )?;
    let per_candidate = delta_step / set.points.len() as f64;
    let schedule = make_schedule(
        per_candidate,
        params.test_alpha,
        params.test_beta,
        params.test_n0,
        params.hard_cap,
    )?;
    let lambda = params.lambda();

    let reports: Result<Vec<PrbCandidateReport>> = set
        .points
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let stream = seed.child(2).child(i as u64);
            let outcome = decide_threshold(
                |draw| {
                    draw_regret_indicator(gp, &fmap, point, params.epsilon, cfg, stream.child(draw))
                        .map(|d| d.indicator)
                },
                lambda,
                &schedule,
                params.interval,
            )?;
            Ok(PrbCandidateReport {
                point: point.clone(),
                estimate: outcome.estimate.mean,
                draws_used: outcome.draws_used,
                guaranteed: outcome.guaranteed,
            })
        })
        .collect();
    let reports = reports?;

    let best = reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.estimate.total_cmp(&b.1.estimate).then(b.0.cmp(&a.0)))
        .map(|(_, r)| r)
        .expect("candidate set is nonempty");
    let stop = best.estimate >= lambda;
    Ok(StopVerdict {
        stop,
        returned_point: stop.then(|| best.point.clone()),
        diagnostics: RuleDiagnostics::Prb {
            evaluated: true,
            lambda,
            delta_est_step: Some(delta_step),
            candidates: reports,
        },
    })
}

/// Acquisition-threshold baseline: stop when the next query's acquisition
/// value is at or below the cutoff.
pub fn acq_rule(view: &StepView, cutoff: f64) -> Result<StopVerdict> {
    let value = view
        .acq_value
        .ok_or_else(|| Error::invalid("acquisition rule needs a recorded acquisition value"))?;
    let stop = value <= cutoff;
    Ok(StopVerdict {
        stop,
        returned_point: if stop { Some(evaluated_incumbent(view.gp)?) } else { None },
        diagnostics: RuleDiagnostics::Acq { value, cutoff },
    })
}

/// Upper confidence bound field mu + sqrt(beta k).
struct UcbFn<'a> {
    gp: &'a PosteriorGP,
    beta: f64,
}

impl DifferentiableFn for UcbFn<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (m, v) = self.gp.mean_var(x);
        m + (self.beta * v).sqrt()
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (m, v, gm, gv) = self.gp.mean_var_grad(x);
        let sd = (self.beta * v).sqrt();
        let grad = gm
            .iter()
            .zip(&gv)
            .map(|(a, b)| a + if v > 1e-18 { self.beta * b / (2.0 * sd) } else { 0.0 })
            .collect();
        (m + sd, grad)
    }
}

/// Confidence-bound-gap baseline: stop once
/// max_x UCB(x) - max_{x in X_t} LCB(x) <= cutoff, with
/// beta_t = (2/5) log(D t^2 pi^2 / 6 delta). A logit link is applied to
/// both bounds before the gap is taken.
pub fn delta_cb_rule(
    view: &StepView,
    cutoff: f64,
    delta: f64,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<StopVerdict> {
    let gp = view.gp;
    if gp.is_empty() {
        return Err(Error::invalid("confidence-bound rule needs evaluated points"));
    }
    let d = gp.dim() as f64;
    let t = view.t.max(1) as f64;
    let beta_t = 0.4 * (d * t * t * std::f64::consts::PI.powi(2) / (6.0 * delta)).ln();

    let ucb_max = optim::maximize(&UcbFn { gp, beta: beta_t }, gp.dim(), cfg, seed)?.max;
    let lcb_max = gp
        .data()
        .points()
        .iter()
        .map(|p| {
            let (m, v) = gp.mean_var(p);
            m - (beta_t * v).sqrt()
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let link = gp.hyperparams().link;
    let gap = match link {
        Link::Identity => ucb_max - lcb_max,
        Link::Logit => link.inverse(ucb_max) - link.inverse(lcb_max),
    };
    let stop = gap <= cutoff;
    Ok(StopVerdict {
        stop,
        returned_point: if stop { Some(evaluated_incumbent(gp)?) } else { None },
        diagnostics: RuleDiagnostics::DeltaCb { ucb_max, lcb_max, gap, cutoff, beta_t },
    })
}

/// Expected-supremum-change baseline, as a declared Monte Carlo proxy: both
/// expected suprema are estimated by maximizing pathwise draws under common
/// random numbers, and the rule stops when the change is small.
#[allow(clippy::too_many_arguments)]
pub fn delta_es_rule(
    view_prev: &StepView,
    view_curr: &StepView,
    cutoff: f64,
    num_paths: u64,
    num_features: usize,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<StopVerdict> {
    if view_prev.t >= view_curr.t {
        return Err(Error::invalid("views must be consecutive steps"));
    }
    if num_paths == 0 {
        return Err(Error::invalid("expected-supremum proxy needs at least one path"));
    }
    let expected_sup = |gp: &PosteriorGP| -> Result<f64> {
        let fmap = build_feature_map(&gp.hyperparams().kernel, num_features, seed.child(0))?;
        let mut total = 0.0;
        for i in 0..num_paths {
            let path_seed = seed.child(1).child(i);
            let path = draw_path(gp, &fmap, path_seed)?;
            let linked = LinkedPath::new(&path);
            total += optim::maximize(&linked, gp.dim(), cfg, path_seed.child(2))?.max;
        }
        Ok(total / num_paths as f64)
    };
    let prev = expected_sup(view_prev.gp)?;
    let curr = expected_sup(view_curr.gp)?;
    let change = (curr - prev).abs();
    let stop = change <= cutoff;
    Ok(StopVerdict {
        stop,
        returned_point: if stop { Some(evaluated_incumbent(view_curr.gp)?) } else { None },
        diagnostics: RuleDiagnostics::DeltaEs {
            expected_sup_prev: prev,
            expected_sup_curr: curr,
            change,
            cutoff,
            num_paths,
            proxy: true,
            degenerate_variance: num_paths == 1,
        },
    })
}

/// Oracle baseline: stop once an evaluated point is within epsilon of the
/// true optimum. Requires the true-objective view.
pub fn oracle_rule(view: &StepView, epsilon: f64) -> Result<StopVerdict> {
    let oracle = view
        .oracle
        .ok_or_else(|| Error::invalid("oracle rule needs the true objective handle"))?;
    if oracle.true_values.is_empty() {
        return Err(Error::invalid("oracle rule needs at least one evaluated point"));
    }
    let (best_idx, best_value) = oracle
        .true_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .expect("nonempty");
    let stop = oracle.optimum - best_value <= epsilon;
    Ok(StopVerdict {
        stop,
        returned_point: if stop { Some(view.gp.data().points()[best_idx].clone()) } else { None },
        diagnostics: RuleDiagnostics::Oracle { best_true_value: best_value, optimum: oracle.optimum },
    })
}

/// Fixed-budget baseline: stop at step t >= budget.
pub fn budget_rule(view: &StepView, budget: usize) -> Result<StopVerdict> {
    let stop = view.t >= budget;
    Ok(StopVerdict {
        stop,
        returned_point: if stop { Some(evaluated_incumbent(view.gp)?) } else { None },
        diagnostics: RuleDiagnostics::Budget { budget },
    })
}
