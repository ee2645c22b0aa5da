//! Replay recorded runs under any stopping rule: identical models for every
//! rule, first-stop semantics, and terminal-performance metrics.

use crate::error::{Error, Result};
use crate::harness::objectives::Objective;
use crate::harness::record::RunRecord;
use crate::optim::OptimizerConfig;
use crate::seed::Seed;
use crate::seqtest::IntervalMethod;
use crate::stopping::{
    acq_rule, budget_rule, delta_cb_rule, delta_es_rule, oracle_rule, prb_rule, OracleView,
    PRBParams, RuleDiagnostics, StepSchedule, StepView, StopVerdict,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    Constant,
    Geometric,
}

/// A stopping rule plus its parameters, as applied during replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleSpec {
    Prb {
        epsilon: f64,
        delta: f64,
        /// Fraction of delta given to the model-risk side.
        delta_split: f64,
        schedule: ScheduleChoice,
        num_features: usize,
        interval: IntervalMethod,
        hard_cap: Option<u64>,
    },
    Acq {
        cutoff: f64,
    },
    DeltaCb {
        cutoff: f64,
        delta: f64,
    },
    DeltaEs {
        cutoff: f64,
        num_paths: u64,
        num_features: usize,
    },
    Oracle {
        epsilon: f64,
    },
    Budget {
        stop_at: usize,
    },
}

impl RuleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RuleSpec::Prb { .. } => "prb",
            RuleSpec::Acq { .. } => "acq",
            RuleSpec::DeltaCb { .. } => "delta_cb",
            RuleSpec::DeltaEs { .. } => "delta_es",
            RuleSpec::Oracle { .. } => "oracle",
            RuleSpec::Budget { .. } => "budget",
        }
    }

    fn prb_params(&self, budget: usize, initial: usize) -> Result<PRBParams> {
        match self {
            RuleSpec::Prb {
                epsilon,
                delta,
                delta_split,
                schedule,
                num_features,
                interval,
                hard_cap,
            } => {
                if !(0.0 < *delta_split && *delta_split < 1.0) {
                    return Err(Error::invalid("delta split must lie in (0,1)"));
                }
                let mut params = PRBParams::new(*epsilon, *delta, budget, initial)?;
                params.delta_mod = delta * delta_split;
                params.delta_est = delta * (1.0 - delta_split);
                params.num_features = *num_features;
                params.interval = *interval;
                params.hard_cap = *hard_cap;
                if *schedule == ScheduleChoice::Geometric {
                    params.schedule = StepSchedule::Geometric {
                        alpha: 1.1,
                        ratio: 1.5,
                        first_check: initial.max(1),
                    };
                }
                params.validate()?;
                Ok(params)
            }
            _ => unreachable!("prb_params called on a non-PRB spec"),
        }
    }
}

/// One replayed run under one rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub rule: String,
    pub run_id: String,
    pub objective: String,
    pub dim: usize,
    pub noise_variance: f64,
    pub stop_step: usize,
    pub terminated: bool,
    pub returned_point: Vec<f64>,
    pub regret: f64,
    pub success: bool,
    pub verdict: StopVerdict,
}

/// Walk the recorded steps from the initial design to the budget,
/// rebuilding the logged posterior at each step and applying the rule; the
/// first stop wins. Runs that never stop report the final step with
/// `terminated = false`.
pub fn replay(
    record: &RunRecord,
    objective: &Objective,
    rule: &RuleSpec,
    eval_epsilon: f64,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<ReplayOutcome> {
    record.validate()?;
    let true_values: Vec<f64> =
        record.steps.iter().map(|s| objective.latent(&s.x)).collect();
    let budget = record.meta.budget;
    let start = record.meta.initial.max(1);

    let prb_params = match rule {
        RuleSpec::Prb { .. } => Some(rule.prb_params(budget, record.meta.initial)?),
        _ => None,
    };

    let mut stopped: Option<(usize, StopVerdict)> = None;
    let mut prev_gp = if start > 1 { Some(record.posterior_at(start - 1)?) } else { None };

    for t in start..=budget {
        let gp = record.posterior_at(t)?;
        let view = StepView {
            gp: &gp,
            t,
            acq_value: record.steps[t - 1].acq_value,
            oracle: Some(OracleView {
                true_values: &true_values[..t],
                optimum: objective.optimum(),
            }),
        };
        let verdict = match rule {
            RuleSpec::Prb { .. } => prb_rule(
                &view,
                prb_params.as_ref().expect("params prepared above"),
                cfg,
                seed.child(t as u64),
            )?,
            RuleSpec::Acq { cutoff } => acq_rule(&view, *cutoff)?,
            RuleSpec::DeltaCb { cutoff, delta } => {
                delta_cb_rule(&view, *cutoff, *delta, cfg, seed.child(t as u64))?
            }
            RuleSpec::DeltaEs { cutoff, num_paths, num_features } => match &prev_gp {
                Some(prev) => {
                    let prev_view =
                        StepView { gp: prev, t: t - 1, acq_value: None, oracle: None };
                    delta_es_rule(
                        &prev_view,
                        &view,
                        *cutoff,
                        *num_paths,
                        *num_features,
                        cfg,
                        seed.child(t as u64),
                    )?
                }
                None => StopVerdict {
                    stop: false,
                    returned_point: None,
                    diagnostics: RuleDiagnostics::DeltaEs {
                        expected_sup_prev: f64::NAN,
                        expected_sup_curr: f64::NAN,
                        change: f64::INFINITY,
                        cutoff: *cutoff,
                        num_paths: *num_paths,
                        proxy: true,
                        degenerate_variance: false,
                    },
                },
            },
            RuleSpec::Oracle { epsilon } => oracle_rule(&view, *epsilon)?,
            RuleSpec::Budget { stop_at } => budget_rule(&view, *stop_at)?,
        };
        if verdict.stop {
            stopped = Some((t, verdict));
            break;
        }
        prev_gp = Some(gp);
    }

    // The oracle baseline's stopping time is when the qualifying point was
    // evaluated, which can predate the first rule check at the initial
    // design boundary.
    if let (RuleSpec::Oracle { epsilon }, Some((t, v))) = (rule, stopped.as_mut()) {
        let first = true_values[..*t]
            .iter()
            .position(|v| objective.optimum() - v <= *epsilon)
            .map(|i| i + 1)
            .unwrap_or(*t);
        *t = first.min(*t);
        let _ = v;
    }

    let (stop_step, terminated, verdict) = match stopped {
        Some((t, v)) => (t, true, v),
        None => {
            // Non-terminating runs report the budget step and the incumbent.
            let gp = record.posterior_at(budget)?;
            let view = StepView { gp: &gp, t: budget, acq_value: None, oracle: None };
            let fallback = budget_rule(&view, budget)?;
            (budget, false, fallback)
        }
    };
    let returned_point = verdict
        .returned_point
        .clone()
        .ok_or_else(|| Error::Record("stop verdict carried no returned point".into()))?;
    let regret = (objective.optimum() - objective.latent(&returned_point)).max(0.0);
    Ok(ReplayOutcome {
        rule: rule.name().to_string(),
        run_id: record.meta.run_id.clone(),
        objective: record.meta.objective.clone(),
        dim: record.meta.dim,
        noise_variance: record.meta.noise_variance,
        stop_step,
        terminated,
        returned_point,
        regret,
        success: regret <= eval_epsilon,
        verdict,
    })
}

/// Post-hoc oracle budget: the smallest stop step such that the incumbent
/// is epsilon-optimal in at least `target_rate` of the recorded runs (the
/// full budget when no step achieves the rate).
pub fn calibrate_budget(
    records: &[RunRecord],
    objectives: &[Objective],
    epsilon: f64,
    target_rate: f64,
) -> Result<usize> {
    if records.is_empty() || records.len() != objectives.len() {
        return Err(Error::invalid("need one objective per record"));
    }
    let budget = records.iter().map(|r| r.meta.budget).min().expect("nonempty");
    let success: Vec<Vec<bool>> = records
        .iter()
        .zip(objectives)
        .map(|(record, objective)| {
            record.steps[..budget]
                .iter()
                .map(|s| objective.optimum() - objective.latent(&s.incumbent) <= epsilon)
                .collect()
        })
        .collect();
    for t in 1..=budget {
        let rate = success.iter().filter(|run| run[t - 1]).count() as f64 / records.len() as f64;
        if rate >= target_rate {
            return Ok(t);
        }
    }
    Ok(budget)
}
