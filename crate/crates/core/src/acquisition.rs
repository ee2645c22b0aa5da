//! In-sample Knowledge Gradient acquisition: the one-step-optimal query
//! when solutions must be previously evaluated points. Expectations over
//! the fantasized observation use Gauss-Hermite quadrature; a link-aware
//! inner expectation handles rate-valued objectives.

use crate::error::{Error, Result};
use crate::model::{Link, PosteriorGP};
use crate::optim::{self, CentralDiff, OptimizerConfig};
use crate::seed::Seed;
use crate::special::gauss_hermite_normal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ISKGConfig {
    /// Gauss-Hermite nodes for the outer (and link-inner) expectation.
    pub quadrature_nodes: usize,
    /// Optimizer for the outer maximization; its random-search budget is
    /// the candidate-seeding budget.
    pub optimizer: OptimizerConfig,
}

impl Default for ISKGConfig {
    fn default() -> Self {
        ISKGConfig { quadrature_nodes: 16, optimizer: OptimizerConfig::default() }
    }
}

impl ISKGConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_nodes < 2 {
            return Err(Error::invalid("quadrature needs at least two nodes"));
        }
        self.optimizer.validate()
    }
}

/// Posterior cross-covariances against a prospective query point.
struct FantasyBasis {
    /// k_t(p, x) for p in X_t, then for p = x itself.
    cross: Vec<f64>,
    /// Posterior means at X_t, then at x.
    means: Vec<f64>,
    /// k_t(x, x) + noise.
    total_var: f64,
}

fn fantasy_basis(gp: &PosteriorGP, x: &[f64]) -> FantasyBasis {
    let t = gp.len();
    let kx = gp.kernel_row(x);
    let w = gp.solve_gram(&kx);
    let mut cross = Vec::with_capacity(t + 1);
    for i in 0..t {
        cross.push(kx[i] - gp.prior_gram().row(i).transpose().dot(&w));
    }
    let (mean_x, var_x) = gp.mean_var(x);
    cross.push(var_x);
    let mut means = gp.mean_at_data();
    means.push(mean_x);
    FantasyBasis { cross, means, total_var: var_x + gp.hyperparams().noise_variance }
}

/// Rank-one fantasy update: posterior means at X_t plus the queried point x
/// after observing y = mu_t(x) + z sqrt(k_t(x,x) + noise), and the deflated
/// variance at `query`.
pub fn fantasy_moments(
    gp: &PosteriorGP,
    x: &[f64],
    z: f64,
    query: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if gp.is_empty() {
        return Err(Error::invalid("fantasy update needs at least one observation"));
    }
    let basis = fantasy_basis(gp, x);
    if basis.total_var <= 0.0 {
        return Err(Error::DegenerateData("zero total variance at the fantasy point".into()));
    }
    let scale = z / basis.total_var.sqrt();
    let means = basis
        .means
        .iter()
        .zip(&basis.cross)
        .map(|(m, k)| m + k * scale)
        .collect();

    let (_, var_q) = gp.mean_var(query);
    let cov_qx = posterior_cross_cov(gp, query, x);
    let var_query = (var_q - cov_qx * cov_qx / basis.total_var).max(0.0);
    Ok((means, var_query))
}

fn posterior_cross_cov(gp: &PosteriorGP, a: &[f64], b: &[f64]) -> f64 {
    let ka = gp.kernel_row(a);
    let kb = gp.kernel_row(b);
    let w = gp.solve_gram(&kb);
    gp.hyperparams().kernel.eval(a, b) - ka.dot(&w)
}

/// E[g^{-1}(xi)] for xi ~ N(mean, var) via quadrature; exact for the
/// identity link.
fn inverse_link_expectation(link: Link, mean: f64, var: f64, rule: &[(f64, f64)]) -> f64 {
    match link {
        Link::Identity => mean,
        Link::Logit => {
            if var <= 0.0 {
                return link.inverse(mean);
            }
            let sd = var.sqrt();
            rule.iter().map(|(z, w)| w * link.inverse(mean + sd * z)).sum()
        }
    }
}

/// E_z[max_j (a_j + b_j z)] for z ~ N(0,1), computed exactly.
///
/// The integrand is piecewise linear, which defeats plain node-based
/// quadrature near arm crossings; integrating each upper-envelope segment
/// against the normal measure is the zero-error limit of splitting the
/// rule at the kinks.
fn expected_max_linear(arms: &[(f64, f64)]) -> f64 {
    use crate::special::{norm_cdf, norm_pdf};
    // Sort by slope; among equal slopes only the highest intercept can win.
    let mut sorted: Vec<(f64, f64)> = arms.to_vec();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
    let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for arm in sorted {
        match dedup.last_mut() {
            Some(last) if (arm.1 - last.1).abs() <= 1e-14 => {
                if arm.0 > last.0 {
                    *last = arm;
                }
            }
            _ => dedup.push(arm),
        }
    }
    // Upper envelope by the convex-hull trick; breakpoints strictly increase.
    let mut envelope: Vec<(f64, f64)> = Vec::with_capacity(dedup.len());
    let mut breaks: Vec<f64> = Vec::with_capacity(dedup.len());
    for (a, b) in dedup {
        loop {
            match envelope.last() {
                None => break,
                Some(&(a0, b0)) => {
                    let cross = (a0 - a) / (b - b0);
                    if breaks.last().is_some_and(|&c| cross <= c) {
                        envelope.pop();
                        breaks.pop();
                    } else {
                        breaks.push(cross);
                        break;
                    }
                }
            }
        }
        envelope.push((a, b));
    }
    let mut total = 0.0;
    let mut lo = f64::NEG_INFINITY;
    for (j, (a, b)) in envelope.iter().enumerate() {
        let hi = breaks.get(j).copied().unwrap_or(f64::INFINITY);
        let cdf_hi = if hi.is_infinite() { 1.0 } else { norm_cdf(hi) };
        let cdf_lo = if lo.is_infinite() { 0.0 } else { norm_cdf(lo) };
        let pdf_hi = if hi.is_infinite() { 0.0 } else { norm_pdf(hi) };
        let pdf_lo = if lo.is_infinite() { 0.0 } else { norm_pdf(lo) };
        total += a * (cdf_hi - cdf_lo) + b * (pdf_lo - pdf_hi);
        lo = hi;
    }
    total
}

/// In-sample Knowledge Gradient value at x:
/// E_z[max nu_{t+1}(X_t u {x}; x, z)] - max nu_t(X_t), clamped at zero.
///
/// Under the identity link the outer expectation is evaluated in closed
/// form (see `expected_max_linear`); the logit link falls back to the
/// configured Gauss-Hermite rule for both expectations.
pub fn iskg_value(gp: &PosteriorGP, x: &[f64], cfg: &ISKGConfig) -> Result<f64> {
    if gp.is_empty() {
        return Err(Error::invalid("acquisition needs at least one observation"));
    }
    cfg.validate()?;
    let link = gp.hyperparams().link;
    let basis = fantasy_basis(gp, x);
    // A fantasy observation below floating-point noise carries no
    // information; report zero rather than amplifying rounding error.
    if basis.total_var <= 1e-12 {
        return Ok(0.0);
    }
    let rule = gauss_hermite_normal(cfg.quadrature_nodes)?;
    let t = gp.len();

    // Current and fantasized variances only matter through the link.
    let (current_vars, fantasy_vars): (Vec<f64>, Vec<f64>) = match link {
        Link::Identity => (vec![0.0; t + 1], vec![0.0; t + 1]),
        Link::Logit => {
            let mut cur: Vec<f64> = gp
                .data()
                .points()
                .iter()
                .map(|p| gp.mean_var(p).1)
                .collect();
            cur.push(basis.cross[t]);
            let fantasy = (0..=t)
                .map(|i| (cur[i] - basis.cross[i] * basis.cross[i] / basis.total_var).max(0.0))
                .collect();
            (cur, fantasy)
        }
    };

    let baseline = (0..t)
        .map(|i| inverse_link_expectation(link, basis.means[i], current_vars[i], &rule))
        .fold(f64::NEG_INFINITY, f64::max);

    let sqrt_tv = basis.total_var.sqrt();
    let expected_best = match link {
        // The fantasy means are linear in z, so the expectation of their
        // maximum integrates exactly.
        Link::Identity => {
            let arms: Vec<(f64, f64)> = (0..=t)
                .map(|i| (basis.means[i], basis.cross[i] / sqrt_tv))
                .collect();
            expected_max_linear(&arms)
        }
        Link::Logit => {
            let mut acc = 0.0;
            for &(z, wq) in &rule {
                let best = (0..=t)
                    .map(|i| {
                        let mean = basis.means[i] + basis.cross[i] * z / sqrt_tv;
                        inverse_link_expectation(link, mean, fantasy_vars[i], &rule)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                acc += wq * best;
            }
            acc
        }
    };
    let value = expected_best - baseline;
    debug_assert!(value > -1e-9, "knowledge gradient fell below zero: {value}");
    Ok(value.max(0.0))
}

/// Choose the next query by maximizing the acquisition over the cube.
/// The quadrature surface is smooth enough for numerical gradients.
pub fn select_query(gp: &PosteriorGP, cfg: &ISKGConfig, seed: Seed) -> Result<Vec<f64>> {
    if gp.is_empty() {
        return Err(Error::invalid("query selection needs at least one observation"));
    }
    cfg.validate()?;
    let field = CentralDiff::new(|x: &[f64]| iskg_value(gp, x, cfg).unwrap_or(f64::NEG_INFINITY));
    Ok(optim::maximize(&field, gp.dim(), &cfg.optimizer, seed)?.argmax)
}
