//! Box-constrained global maximization on the unit hypercube.
//!
//! Strategy: a low-discrepancy random search seeds a handful of projected
//! L-BFGS refinements. Used on sample paths, acquisition surfaces, and
//! confidence bounds; all contracts are best-effort against declared
//! test oracles, not certified global optima.

use crate::error::{Error, Result};
use crate::seed::Seed;
use serde::{Deserialize, Serialize};

/// A scalar field with an analytic (or supplied) gradient.
pub trait DifferentiableFn {
    fn value(&self, x: &[f64]) -> f64;
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Pair a value closure with its gradient closure.
pub struct FnWithGrad<F, G> {
    pub f: F,
    pub g: G,
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> DifferentiableFn for FnWithGrad<F, G> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        ((self.f)(x), (self.g)(x))
    }
}

/// Central-difference gradient wrapper for value-only objectives.
pub struct CentralDiff<F> {
    pub f: F,
    pub step: f64,
}

impl<F: Fn(&[f64]) -> f64> CentralDiff<F> {
    pub fn new(f: F) -> Self {
        CentralDiff { f, step: 1e-6 }
    }
}

impl<F: Fn(&[f64]) -> f64> DifferentiableFn for CentralDiff<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let v = (self.f)(x);
        let mut xs = x.to_vec();
        let grad = (0..x.len())
            .map(|d| {
                let x0 = xs[d];
                xs[d] = x0 + self.step;
                let hi = (self.f)(&xs);
                xs[d] = x0 - self.step;
                let lo = (self.f)(&xs);
                xs[d] = x0;
                (hi - lo) / (2.0 * self.step)
            })
            .collect();
        (v, grad)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub random_search_points: usize,
    pub num_starts: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            random_search_points: 2048,
            num_starts: 8,
            grad_tol: 1e-6,
            max_iters: 200,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.random_search_points == 0
            || self.num_starts == 0
            || self.max_iters == 0
            || self.grad_tol <= 0.0
        {
            return Err(Error::invalid("optimizer configuration fields must be positive"));
        }
        Ok(())
    }

    /// A cheaper profile for inner loops that run thousands of times.
    pub fn light(dim: usize) -> Self {
        OptimizerConfig {
            random_search_points: 128 * dim.max(1),
            num_starts: 4,
            grad_tol: 1e-5,
            max_iters: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaximizeOutcome {
    pub argmax: Vec<f64>,
    pub max: f64,
    pub evals: u64,
}

/// Result of a sup-gap certification query.
#[derive(Debug, Clone)]
pub struct GapOutcome {
    /// True iff some evaluated point exceeded `fn(x0) + epsilon`.
    pub exceeded: bool,
    /// The certifying point, present iff `exceeded`.
    pub witness: Option<Vec<f64>>,
    pub witness_value: Option<f64>,
    pub base_value: f64,
    pub evals: u64,
}

// ---------------------------------------------------------------------------
// Low-discrepancy probing

const SOBOL_MAX_DIM: usize = 10;

// Joe-Kuo (new-joe-kuo-6) primitive polynomials and initial direction
// numbers for dimensions 2..=10; dimension 1 is the van der Corput sequence.
const SOBOL_PARAMS: [(u32, u32, &[u32]); 9] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

/// Digitally shifted Sobol points on [0,1)^dim; falls back to seeded uniform
/// sampling above `SOBOL_MAX_DIM` (never reached by this artifact's spaces).
pub(crate) struct LowDiscrepancy {
    dim: usize,
    directions: Vec<[u32; 32]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
    uniform: Option<rand_chacha::ChaCha8Rng>,
}

impl LowDiscrepancy {
    pub fn new(dim: usize, seed: Seed) -> Self {
        use rand::Rng;
        let mut rng = seed.rng();
        if dim > SOBOL_MAX_DIM {
            return LowDiscrepancy {
                dim,
                directions: Vec::new(),
                shift: Vec::new(),
                state: Vec::new(),
                index: 0,
                uniform: Some(rng),
            };
        }
        let mut directions = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut v = [0u32; 32];
            if d == 0 {
                for (k, slot) in v.iter_mut().enumerate() {
                    *slot = 1u32 << (31 - k);
                }
            } else {
                let (s, a, m) = SOBOL_PARAMS[d - 1];
                let s = s as usize;
                for k in 0..s {
                    v[k] = m[k] << (31 - k);
                }
                for k in s..32 {
                    v[k] = v[k - s] ^ (v[k - s] >> s);
                    for j in 1..s {
                        if (a >> (s - 1 - j)) & 1 == 1 {
                            v[k] ^= v[k - j];
                        }
                    }
                }
            }
            directions.push(v);
        }
        let shift: Vec<u32> = (0..dim).map(|_| rng.random::<u32>()).collect();
        LowDiscrepancy {
            dim,
            directions,
            shift,
            state: vec![0; dim],
            index: 0,
            uniform: None,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        use rand::Rng;
        if let Some(rng) = self.uniform.as_mut() {
            return (0..self.dim).map(|_| rng.random::<f64>()).collect();
        }
        if self.index > 0 {
            let bit = self.index.trailing_zeros() as usize;
            for d in 0..self.dim {
                self.state[d] ^= self.directions[d][bit];
            }
        }
        self.index += 1;
        self.state
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| f64::from(x ^ s) / f64::from(u32::MAX) * (1.0 - 1e-12))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Projected L-BFGS

struct LbfgsHistory {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
    cap: usize,
}

impl LbfgsHistory {
    fn new(cap: usize) -> Self {
        LbfgsHistory { s: Vec::new(), y: Vec::new(), rho: Vec::new(), cap }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy <= 1e-12 * (ss * yy).sqrt() || !sy.is_finite() {
            return;
        }
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.rho.push(1.0 / sy);
        self.s.push(s);
        self.y.push(y);
    }

    /// Two-loop recursion: approximates H * g for the minimization problem.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let a = self.rho[i] * dot(&self.s[i], &q);
            alpha[i] = a;
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= a * yj;
            }
        }
        if k > 0 {
            let sy = 1.0 / self.rho[k - 1];
            let yy = dot(&self.y[k - 1], &self.y[k - 1]);
            if yy > 0.0 {
                let scale = sy / yy;
                for qj in q.iter_mut() {
                    *qj *= scale;
                }
            }
        }
        for i in 0..k {
            let b = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - b) * sj;
            }
        }
        q
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_to_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(l, h);
    }
}

/// Gradient components that would push an iterate out of the box are zeroed.
fn project_gradient(g: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            if (x[i] <= lo[i] && gi < 0.0) || (x[i] >= hi[i] && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

pub(crate) struct RefineResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: u64,
    pub aborted: bool,
}

/// Maximize `f` over the box from `x0` with projected L-BFGS ascent.
///
/// `watch` sees every evaluated point; returning true aborts the refinement
/// (used for sup-gap early exit).
pub(crate) fn lbfgs_box<F: DifferentiableFn + ?Sized>(
    f: &F,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
    max_iters: usize,
    grad_tol: f64,
    watch: &mut dyn FnMut(&[f64], f64) -> bool,
) -> RefineResult {
    let mut x = x0.to_vec();
    clamp_to_box(&mut x, lo, hi);
    let mut evals: u64 = 1;
    let (mut v, mut grad) = f.value_grad(&x);
    if watch(&x, v) {
        return RefineResult { x, value: v, evals, aborted: true };
    }
    let mut history = LbfgsHistory::new(8);

    for _ in 0..max_iters {
        if !v.is_finite() {
            break;
        }
        let pg = project_gradient(&grad, &x, lo, hi);
        let pg_norm = pg.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if pg_norm <= grad_tol {
            break;
        }
        // Minimization convention inside the history: gradients negated.
        let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<f64>>();
        let mut dir = history.direction(&neg(&pg));
        for d in dir.iter_mut() {
            *d = -*d;
        }
        if dot(&dir, &pg) <= 0.0 {
            history = LbfgsHistory::new(8);
            dir = pg.clone();
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand: Vec<f64> =
                x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            clamp_to_box(&mut cand, lo, hi);
            let moved: f64 = cand
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if moved < 1e-15 {
                break;
            }
            let (cv, cg) = f.value_grad(&cand);
            evals += 1;
            if watch(&cand, cv) {
                return RefineResult { x: cand, value: cv, evals, aborted: true };
            }
            let directional: f64 =
                cand.iter().zip(&x).zip(&grad).map(|((c, xi), g)| (c - xi) * g).sum();
            if cv.is_finite() && cv >= v + 1e-4 * directional.max(0.0) && cv > v - 1e-16 {
                let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = cg.iter().zip(&grad).map(|(a, b)| -(a - b)).collect();
                history.push(s, y);
                x = cand;
                v = cv;
                grad = cg;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    RefineResult { x, value: v, evals, aborted: false }
}

// ---------------------------------------------------------------------------
// Public entry points

enum SearchMode {
    Full,
    Gap { threshold: f64 },
}

struct SearchOutcome {
    best_x: Vec<f64>,
    best_v: f64,
    evals: u64,
    hit: Option<(Vec<f64>, f64)>,
}

fn search<F: DifferentiableFn + ?Sized>(
    f: &F,
    dim: usize,
    cfg: &OptimizerConfig,
    seed: Seed,
    mode: SearchMode,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let lo = vec![0.0; dim];
    let hi = vec![1.0; dim];
    let threshold = match mode {
        SearchMode::Full => f64::INFINITY,
        SearchMode::Gap { threshold } => threshold,
    };

    let mut sobol = LowDiscrepancy::new(dim, seed.child(0));
    let mut probes: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.random_search_points);
    let mut evals: u64 = 0;
    for _ in 0..cfg.random_search_points {
        let x = sobol.next_point();
        let v = f.value(&x);
        evals += 1;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective returned {v} at {x:?}")));
        }
        if v > threshold {
            return Ok(SearchOutcome { best_x: x.clone(), best_v: v, evals, hit: Some((x, v)) });
        }
        probes.push((x, v));
    }

    probes.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (mut best_x, mut best_v) = probes[0].clone();

    let mut hit: Option<(Vec<f64>, f64)> = None;
    for (x0, _) in probes.iter().take(cfg.num_starts.min(probes.len())) {
        let mut watcher = |x: &[f64], v: f64| -> bool {
            if v > threshold {
                hit = Some((x.to_vec(), v));
                true
            } else {
                false
            }
        };
        let refined =
            lbfgs_box(f, &lo, &hi, x0, cfg.max_iters, cfg.grad_tol, &mut watcher);
        evals += refined.evals;
        if refined.value.is_finite() && refined.value > best_v {
            best_v = refined.value;
            best_x = refined.x.clone();
        }
        if refined.aborted {
            return Ok(SearchOutcome { best_x, best_v, evals, hit });
        }
    }
    Ok(SearchOutcome { best_x, best_v, evals, hit: None })
}

/// Global maximization over [0,1]^dim. The result never falls below the best
/// random-search probe, and is deterministic given the seed.
pub fn maximize<F: DifferentiableFn + ?Sized>(
    f: &F,
    dim: usize,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<MaximizeOutcome> {
    let out = search(f, dim, cfg, seed, SearchMode::Full)?;
    Ok(MaximizeOutcome { argmax: out.best_x, max: out.best_v, evals: out.evals })
}

/// Decide whether `sup f - f(x0) > epsilon`, exiting as soon as any evaluated
/// point certifies the gap. A true result carries a re-checkable witness;
/// false results inherit `maximize`'s best-effort contract.
pub fn exceeds_gap<F: DifferentiableFn + ?Sized>(
    f: &F,
    x0: &[f64],
    epsilon: f64,
    cfg: &OptimizerConfig,
    seed: Seed,
) -> Result<GapOutcome> {
    let base_value = f.value(x0);
    if !base_value.is_finite() {
        return Err(Error::NonFinite(format!("objective returned {base_value} at x0")));
    }
    let threshold = base_value + epsilon;
    let out = search(f, x0.len(), cfg, seed, SearchMode::Gap { threshold })?;
    let (exceeded, witness, witness_value) = match out.hit {
        Some((x, v)) => (true, Some(x), Some(v)),
        None => (false, None, None),
    };
    Ok(GapOutcome { exceeded, witness, witness_value, base_value, evals: out.evals + 1 })
}
