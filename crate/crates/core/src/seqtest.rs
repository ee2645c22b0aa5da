//! Confidence intervals for Bernoulli and bounded means, risk/sample-size
//! schedules, and the adaptive decision loop that tests whether a Bernoulli
//! mean exceeds a level using as few draws as possible.

use crate::error::{Error, Result};
use crate::special::beta_quantile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    ClopperPearson,
    Jeffreys,
    EmpiricalBernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
    pub nominal_delta: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn validate_counts(k: u64, n: u64, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("interval needs at least one draw"));
    }
    if k > n {
        return Err(Error::invalid(format!("successes {k} exceed draws {n}")));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::invalid(format!("risk level must lie in (0,1), got {delta}")));
    }
    Ok(())
}

/// Exact binomial interval [B(delta/2; k, n-k+1), B(1-delta/2; k+1, n-k)],
/// with the edge conventions lo = 0 at k = 0 and hi = 1 at k = n.
pub fn clopper_pearson(k: u64, n: u64, delta: f64) -> Result<ConfidenceInterval> {
    validate_counts(k, n, delta)?;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 { 0.0 } else { beta_quantile(delta / 2.0, kf, nf - kf + 1.0)? };
    let hi = if k == n { 1.0 } else { beta_quantile(1.0 - delta / 2.0, kf + 1.0, nf - kf)? };
    Ok(ConfidenceInterval { lo, hi, method: IntervalMethod::ClopperPearson, nominal_delta: delta })
}

/// Equal-tailed credible interval from the Jeffreys posterior
/// Beta(k + 1/2, n - k + 1/2); contained in the Clopper-Pearson interval
/// for the same counts.
pub fn jeffreys_interval(k: u64, n: u64, delta: f64) -> Result<ConfidenceInterval> {
    validate_counts(k, n, delta)?;
    let (a, b) = (k as f64 + 0.5, (n - k) as f64 + 0.5);
    Ok(ConfidenceInterval {
        lo: beta_quantile(delta / 2.0, a, b)?,
        hi: beta_quantile(1.0 - delta / 2.0, a, b)?,
        method: IntervalMethod::Jeffreys,
        nominal_delta: delta,
    })
}

/// Empirical Bernstein interval for values in [a, b]:
/// mean +/- [ S_n sqrt(2 log(3/delta) / n) + 3 (b-a) log(3/delta) / n ],
/// intersected with the support.
pub fn empirical_bernstein(
    values: &[f64],
    support: (f64, f64),
    delta: f64,
) -> Result<ConfidenceInterval> {
    let (a, b) = support;
    if values.is_empty() {
        return Err(Error::invalid("interval needs at least one draw"));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::invalid(format!("risk level must lie in (0,1), got {delta}")));
    }
    if b <= a {
        return Err(Error::invalid("support must have positive width"));
    }
    if values.iter().any(|v| *v < a || *v > b) {
        return Err(Error::invalid("value outside the declared support"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (mean - v) * (mean - v)).sum::<f64>() / n;
    let log_term = (3.0 / delta).ln();
    let delta_n = var.sqrt() * (2.0 * log_term / n).sqrt() + 3.0 * (b - a) * log_term / n;
    Ok(ConfidenceInterval {
        lo: (mean - delta_n).max(a),
        hi: (mean + delta_n).min(b),
        method: IntervalMethod::EmpiricalBernstein,
        nominal_delta: delta,
    })
}

/// Interval for Bernoulli counts under any supported method.
pub fn interval_for_counts(
    k: u64,
    n: u64,
    delta: f64,
    method: IntervalMethod,
) -> Result<ConfidenceInterval> {
    match method {
        IntervalMethod::ClopperPearson => clopper_pearson(k, n, delta),
        IntervalMethod::Jeffreys => jeffreys_interval(k, n, delta),
        IntervalMethod::EmpiricalBernstein => {
            validate_counts(k, n, delta)?;
            let (kf, nf) = (k as f64, n as f64);
            let mean = kf / nf;
            let sd = (mean * (1.0 - mean)).sqrt();
            let log_term = (3.0 / delta).ln();
            let delta_n = sd * (2.0 * log_term / nf).sqrt() + 3.0 * log_term / nf;
            Ok(ConfidenceInterval {
                lo: (mean - delta_n).max(0.0),
                hi: (mean + delta_n).min(1.0),
                method,
                nominal_delta: delta,
            })
        }
    }
}

/// Round schedule for the adaptive test: risks d_j = j^-alpha (alpha-1)/alpha
/// times the per-step budget (so they sum below it), and geometrically
/// growing sample sizes n_j = ceil(beta^(j-1) n0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub n0: u64,
    pub delta_est_step: f64,
    pub hard_cap: Option<u64>,
}

pub const DEFAULT_ALPHA: f64 = 1.1;
pub const DEFAULT_BETA: f64 = 1.5;
pub const DEFAULT_N0: u64 = 64;
pub const DEFAULT_HARD_CAP: u64 = 1000;

pub fn make_schedule(
    delta_est_step: f64,
    alpha: f64,
    beta: f64,
    n0: u64,
    hard_cap: Option<u64>,
) -> Result<TestSchedule> {
    if alpha <= 1.0 || beta <= 1.0 || n0 == 0 {
        return Err(Error::invalid("schedule requires alpha > 1, beta > 1, n0 >= 1"));
    }
    if !(0.0 < delta_est_step && delta_est_step < 1.0) {
        return Err(Error::invalid(format!(
            "per-step risk budget must lie in (0,1), got {delta_est_step}"
        )));
    }
    Ok(TestSchedule { alpha, beta, n0, delta_est_step, hard_cap })
}

impl TestSchedule {
    /// Per-step defaults with the given risk budget.
    pub fn with_defaults(delta_est_step: f64) -> Result<Self> {
        make_schedule(
            delta_est_step,
            DEFAULT_ALPHA,
            DEFAULT_BETA,
            DEFAULT_N0,
            Some(DEFAULT_HARD_CAP),
        )
    }

    /// Risk allocated to round j (1-based).
    pub fn risk(&self, j: u32) -> f64 {
        (j as f64).powf(-self.alpha) * (self.alpha - 1.0) / self.alpha * self.delta_est_step
    }

    /// Draws required by the end of round j (1-based).
    pub fn draws(&self, j: u32) -> u64 {
        (self.beta.powi(j as i32 - 1) * self.n0 as f64).ceil() as u64
    }

    /// Lazily yields (d_j, n_j) pairs.
    pub fn rounds(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        (1u32..).map(move |j| (self.risk(j), self.draws(j)))
    }
}

/// Mean estimate for a Bernoulli quantity with its interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BernoulliEstimate {
    pub mean: f64,
    pub num_draws: u64,
    pub successes: u64,
    pub interval: ConfidenceInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Above,
    Below,
    InconclusiveCapped,
}

/// Outcome of the adaptive threshold test. `guaranteed` is false exactly
/// when the draw cap fired before the level exited the interval, in which
/// case the decision direction still follows the point estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub decision: Decision,
    pub estimate: BernoulliEstimate,
    pub draws_used: u64,
    pub rounds: u32,
    pub guaranteed: bool,
}

impl DecisionOutcome {
    /// The stop signal callers act on: point estimate at or above the level.
    pub fn estimate_at_least(&self, lambda: f64) -> bool {
        self.estimate.mean >= lambda
    }
}

/// Adaptive sequential test of "is the Bernoulli mean >= lambda?".
///
/// Rounds j = 1, 2, ...: draws are topped up to n_j, an interval at
/// confidence 1 - d_j is built, and the loop exits once lambda leaves the
/// interval (guaranteed decision) or the hard cap is reached (unguaranteed;
/// direction taken from the point estimate).
pub fn decide_threshold(
    mut sampler: impl FnMut(u64) -> Result<bool>,
    lambda: f64,
    schedule: &TestSchedule,
    method: IntervalMethod,
) -> Result<DecisionOutcome> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0,1), got {lambda}")));
    }
    let mut successes: u64 = 0;
    let mut drawn: u64 = 0;
    for j in 1u32.. {
        let mut target = schedule.draws(j);
        let mut capped = false;
        if let Some(cap) = schedule.hard_cap {
            if target >= cap {
                target = cap;
                capped = true;
            }
        }
        while drawn < target {
            if sampler(drawn)? {
                successes += 1;
            }
            drawn += 1;
        }
        let d_j = schedule.risk(j);
        let interval = interval_for_counts(successes, drawn, d_j, method)?;
        let mean = successes as f64 / drawn as f64;
        let estimate = BernoulliEstimate { mean, num_draws: drawn, successes, interval };
        if !interval.contains(lambda) {
            let decision = if mean >= lambda { Decision::Above } else { Decision::Below };
            return Ok(DecisionOutcome {
                decision,
                estimate,
                draws_used: drawn,
                rounds: j,
                guaranteed: true,
            });
        }
        if capped {
            return Ok(DecisionOutcome {
                decision: Decision::InconclusiveCapped,
                estimate,
                draws_used: drawn,
                rounds: j,
                guaranteed: false,
            });
        }
    }
    unreachable!("round counter is unbounded")
}
