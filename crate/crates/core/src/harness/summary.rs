//! Aggregation of replay outcomes into per-rule summary rows and the fixed
//! CSV format, plus the decision-cost and interval-coverage simulators
//! behind the sweep subcommands.

use crate::error::{Error, Result};
use crate::harness::replay::ReplayOutcome;
use crate::seed::Seed;
use crate::seqtest::{
    decide_threshold, interval_for_counts, make_schedule, Decision, IntervalMethod, TestSchedule,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Regrets are reported in log10 with this floor, so exact hits do not
/// produce infinities.
pub const LOG_REGRET_FLOOR: f64 = -9.0;

pub fn log10_regret(regret: f64) -> f64 {
    regret.max(10f64.powf(LOG_REGRET_FLOOR)).log10()
}

/// Linear-interpolation quartile on a sorted copy of the values.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rule: String,
    pub objective: String,
    pub dim: usize,
    pub noise: f64,
    pub n_runs: usize,
    pub success_rate: f64,
    pub term_rate: f64,
    pub stop_q25: f64,
    pub stop_q50: f64,
    pub stop_q75: f64,
    pub regret_q25: f64,
    pub regret_q50: f64,
    pub regret_q75: f64,
    /// Quartiles of log10(regret - epsilon) over failed runs, when any.
    pub excess_q: Option<(f64, f64, f64)>,
}

/// Collapse outcomes (one rule, one problem) into a summary row. Regret
/// quartiles are in log10 scale with the standard floor; excess regret is
/// only defined over runs whose regret exceeded epsilon.
pub fn summarize(outcomes: &[ReplayOutcome], epsilon: f64) -> Result<SummaryRow> {
    if outcomes.is_empty() {
        return Err(Error::invalid("cannot summarize zero outcomes"));
    }
    let first = &outcomes[0];
    if outcomes.iter().any(|o| o.rule != first.rule || o.objective != first.objective) {
        return Err(Error::invalid("summary rows must not mix rules or objectives"));
    }
    let n = outcomes.len();
    let stops: Vec<f64> = outcomes.iter().map(|o| o.stop_step as f64).collect();
    let regrets: Vec<f64> = outcomes.iter().map(|o| log10_regret(o.regret)).collect();
    let excess: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.regret > epsilon)
        .map(|o| log10_regret(o.regret - epsilon))
        .collect();
    Ok(SummaryRow {
        rule: first.rule.clone(),
        objective: first.objective.clone(),
        dim: first.dim,
        noise: first.noise_variance,
        n_runs: n,
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n as f64,
        term_rate: outcomes.iter().filter(|o| o.terminated).count() as f64 / n as f64,
        stop_q25: quantile(&stops, 0.25),
        stop_q50: quantile(&stops, 0.50),
        stop_q75: quantile(&stops, 0.75),
        regret_q25: quantile(&regrets, 0.25),
        regret_q50: quantile(&regrets, 0.50),
        regret_q75: quantile(&regrets, 0.75),
        excess_q: if excess.is_empty() {
            None
        } else {
            Some((quantile(&excess, 0.25), quantile(&excess, 0.50), quantile(&excess, 0.75)))
        },
    })
}

pub const SUMMARY_CSV_HEADER: &str = "rule,objective,dim,noise,n_runs,success_rate,term_rate,stop_q25,stop_q50,stop_q75,regret_q25,regret_q50,regret_q75";

impl SummaryRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.rule,
            self.objective,
            self.dim,
            self.noise,
            self.n_runs,
            self.success_rate,
            self.term_rate,
            self.stop_q25,
            self.stop_q50,
            self.stop_q75,
            self.regret_q25,
            self.regret_q50,
            self.regret_q75
        )
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    for row in rows {
        out.push('\n');
        out.push_str(&row.to_csv_row());
    }
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Decision-cost sweep (median draws as a function of p and delta)

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub delta: f64,
    pub lambda: f64,
    pub reps: u32,
    pub median_draws: f64,
    pub draws_q25: f64,
    pub draws_q75: f64,
    pub wrong_rate: f64,
    pub guaranteed_rate: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "p,delta,lambda,reps,median_draws,draws_q25,draws_q75,wrong_rate,guaranteed_rate";

/// Simulate the adaptive test on Bernoulli(p) draws over a (p, delta) grid.
pub fn decision_cost_sweep(
    p_grid: &[f64],
    delta_grid: &[f64],
    lambda: f64,
    reps: u32,
    hard_cap: Option<u64>,
    seed: Seed,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (pi, &p) in p_grid.iter().enumerate() {
        for (di, &delta) in delta_grid.iter().enumerate() {
            let schedule = TestSchedule { hard_cap, ..make_schedule(delta, 1.1, 1.5, 64, None)? };
            let mut draws = Vec::with_capacity(reps as usize);
            let mut wrong = 0u32;
            let mut guaranteed = 0u32;
            for rep in 0..reps {
                let cell = seed.child((pi * delta_grid.len() + di) as u64).child(rep.into());
                let mut rng = cell.rng();
                let out = decide_threshold(
                    |_| Ok(rng.random::<f64>() < p),
                    lambda,
                    &schedule,
                    IntervalMethod::ClopperPearson,
                )?;
                draws.push(out.draws_used as f64);
                if out.guaranteed {
                    guaranteed += 1;
                    let truth = p >= lambda;
                    let decided_above = out.decision == Decision::Above;
                    if truth != decided_above {
                        wrong += 1;
                    }
                }
            }
            rows.push(SweepRow {
                p,
                delta,
                lambda,
                reps,
                median_draws: quantile(&draws, 0.5),
                draws_q25: quantile(&draws, 0.25),
                draws_q75: quantile(&draws, 0.75),
                wrong_rate: f64::from(wrong) / f64::from(reps),
                guaranteed_rate: f64::from(guaranteed) / f64::from(reps),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    for r in rows {
        out.push('\n');
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.p,
            r.delta,
            r.lambda,
            r.reps,
            r.median_draws,
            r.draws_q25,
            r.draws_q75,
            r.wrong_rate,
            r.guaranteed_rate
        ));
    }
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Interval-coverage simulation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: IntervalMethod,
    pub p: f64,
    pub n: u64,
    pub delta: f64,
    pub sims: u32,
    pub coverage: f64,
}

pub const COVERAGE_CSV_HEADER: &str = "interval,p,n,delta,sims,coverage";

/// Empirical coverage of an interval method over a (p, n) grid. Intervals
/// are memoized per success count, so large simulation counts stay cheap.
pub fn coverage_sim(
    method: IntervalMethod,
    p_grid: &[f64],
    n_grid: &[u64],
    delta: f64,
    sims: u32,
    seed: Seed,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::new();
    for (pi, &p) in p_grid.iter().enumerate() {
        for (ni, &n) in n_grid.iter().enumerate() {
            let intervals: Result<Vec<_>> =
                (0..=n).map(|k| interval_for_counts(k, n, delta, method)).collect();
            let intervals = intervals?;
            let mut rng = seed.child((pi * n_grid.len() + ni) as u64).rng();
            let mut covered = 0u32;
            for _ in 0..sims {
                let k = (0..n).filter(|_| rng.random::<f64>() < p).count();
                if intervals[k].contains(p) {
                    covered += 1;
                }
            }
            rows.push(CoverageRow {
                method,
                p,
                n,
                delta,
                sims,
                coverage: f64::from(covered) / f64::from(sims),
            });
        }
    }
    Ok(rows)
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from(COVERAGE_CSV_HEADER);
    for r in rows {
        out.push('\n');
        let method = match r.method {
            IntervalMethod::ClopperPearson => "cp",
            IntervalMethod::Jeffreys => "jeffreys",
            IntervalMethod::EmpiricalBernstein => "bernstein",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            method, r.p, r.n, r.delta, r.sims, r.coverage
        ));
    }
    out.push('\n');
    out
}
