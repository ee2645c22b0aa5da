//! Experiment runner: record BO runs, replay them under stopping rules,
//! make one-off sequential decisions, and run the interval/decision-cost
//! simulators. Flags may also be supplied through a TOML config file
//! (`--config`); explicit flags win.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prbopt::harness::{
    self, builtin_objectives, calibrate_budget, load_records, objective_by_name, replay, run_bo,
    summarize, BoConfig, Objective, ReplayOutcome, RuleSpec, RunRecord, ScheduleChoice,
};
use prbopt::model::{GPHyperparams, KernelSpec, Link};
use prbopt::optim::{CentralDiff, OptimizerConfig};
use prbopt::pathwise::{build_feature_map, DEFAULT_NUM_FEATURES};
use prbopt::regret::draw_regret_indicator;
use prbopt::seed::Seed;
use prbopt::seqtest::{decide_threshold, IntervalMethod, TestSchedule};
use rayon::prelude::*;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "prbopt", about = "Bayesian optimization with regret-bound stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute seeded BO runs and record them step by step.
    Run(RunArgs),
    /// Apply a stopping rule to recorded runs and summarize.
    Replay(ReplayArgs),
    /// One-off sequential stop/continue decision on a stored model/point.
    Decide(DecideArgs),
    /// Empirical coverage of the interval constructions.
    Coverage(CoverageArgs),
    /// Objective sanity checks and oracle optima.
    Bench,
    /// Median-draws sweep of the adaptive test over (p, delta).
    SweepFig3(SweepArgs),
}

/// Flat key/value mirror of the flags, loaded from --config.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    objective: Option<String>,
    dim: Option<usize>,
    noise: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    delta_split: Option<f64>,
    budget: Option<usize>,
    init: Option<usize>,
    seeds: Option<String>,
    rule: Option<String>,
    cutoff: Option<f64>,
    interval: Option<String>,
    schedule: Option<String>,
    cap: Option<u64>,
    out: Option<PathBuf>,
    features: Option<usize>,
    model: Option<String>,
    paths: Option<u64>,
    sims: Option<u32>,
    reps: Option<u32>,
    lambda: Option<f64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn env_seed() -> u64 {
    std::env::var("PRB_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

fn parse_seed_range(spec: &str) -> Result<std::ops::Range<u64>> {
    let (a, b) = spec
        .split_once("..")
        .ok_or_else(|| anyhow!("seed range must look like A..B, got '{spec}'"))?;
    let start: u64 = a.trim().parse().context("seed range start")?;
    let end: u64 = b.trim().parse().context("seed range end")?;
    if end <= start {
        bail!("seed range must be nonempty, got {start}..{end}");
    }
    Ok(start..end)
}

fn parse_interval(name: &str) -> Result<IntervalMethod> {
    match name {
        "cp" | "clopper-pearson" => Ok(IntervalMethod::ClopperPearson),
        "jeffreys" => Ok(IntervalMethod::Jeffreys),
        "bernstein" => Ok(IntervalMethod::EmpiricalBernstein),
        other => bail!("unknown interval method '{other}' (expected cp|jeffreys|bernstein)"),
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad grid entry '{v}': {e}")))
        .collect()
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
}

// ---------------------------------------------------------------------------
// run

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    objective: Option<String>,
    /// Dimension (GP-draw objectives; analytic ones are fixed).
    #[arg(long)]
    dim: Option<usize>,
    /// Observation noise variance.
    #[arg(long)]
    noise: Option<f64>,
    /// Total budget T of function evaluations.
    #[arg(long)]
    budget: Option<usize>,
    /// Initial random design size T0.
    #[arg(long)]
    init: Option<usize>,
    /// Half-open seed range A..B, one run per seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Feature count for pathwise machinery (GP draws use the default).
    #[arg(long)]
    features: Option<usize>,
    /// Surrogate mode: map (refit each step) or oracle (true GP-draw
    /// hyperparameters, GP objective only).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let name = args.objective.or(file.objective).unwrap_or_else(|| "gp".into());
    let dim = args.dim.or(file.dim).unwrap_or(2);
    let noise = args.noise.or(file.noise).unwrap_or(1e-6);
    let budget = args.budget.or(file.budget).unwrap_or(64);
    let init = args.init.or(file.init).unwrap_or(5);
    let model = args.model.or(file.model).unwrap_or_else(|| "map".into());
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("runs"));
    let seeds = match args.seeds.or(file.seeds) {
        Some(spec) => parse_seed_range(&spec)?,
        None => env_seed()..env_seed() + 1,
    };
    let _ = args.features.or(file.features);
    ensure_out_dir(&out)?;

    let records: Result<Vec<RunRecord>> = seeds
        .collect::<Vec<u64>>()
        .par_iter()
        .map(|&seed| {
            let objective_seed = Seed::new(seed).child(500);
            let objective = objective_by_name(&name, dim, noise, objective_seed)?;
            let mut cfg = BoConfig::new(budget, init);
            cfg.acquisition.optimizer = OptimizerConfig::light(objective.dim());
            match model.as_str() {
                "map" => {}
                "oracle" => {
                    if name != "gp" {
                        bail!("oracle model is only defined for GP-draw objectives");
                    }
                    let hyper = GPHyperparams::new(
                        0.0,
                        KernelSpec::isotropic(
                            1.0,
                            (objective.dim() as f64).sqrt() / 4.0,
                            objective.dim(),
                        )?,
                        noise,
                        Link::Identity,
                    )?;
                    cfg = cfg.with_fixed_model(&hyper);
                }
                other => bail!("unknown model mode '{other}' (expected map|oracle)"),
            }
            let mut record = run_bo(&objective, &cfg, Seed::new(seed))?;
            record.meta.objective_seed = objective_seed.0;
            Ok(record)
        })
        .collect();
    let records = records?;
    for record in &records {
        let path = out.join(format!("{}.jsonl", record.meta.run_id));
        record.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// replay

#[derive(Args)]
struct ReplayArgs {
    /// Directory of recorded runs (*.jsonl).
    #[arg(long)]
    records: Option<PathBuf>,
    /// prb | acq | delta-cb | delta-es | oracle | budget
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Fraction of delta allocated to model risk (PRB).
    #[arg(long)]
    delta_split: Option<f64>,
    /// Threshold for acq / delta-cb / delta-es.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    interval: Option<String>,
    /// constant | geometric (PRB risk schedule over steps)
    #[arg(long)]
    schedule: Option<String>,
    /// Draw cap for the adaptive test (0 disables).
    #[arg(long)]
    cap: Option<u64>,
    /// Feature count for pathwise draws.
    #[arg(long)]
    features: Option<usize>,
    /// Paths for the expected-supremum proxy.
    #[arg(long)]
    paths: Option<u64>,
    /// Explicit budget-rule stop step (otherwise calibrated post hoc).
    #[arg(long)]
    stop_budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let records_dir = args.records.unwrap_or_else(|| PathBuf::from("runs"));
    let rule_name = args.rule.or(file.rule).unwrap_or_else(|| "prb".into());
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.1);
    let delta = args.delta.or(file.delta).unwrap_or(0.05);
    let delta_split = args.delta_split.or(file.delta_split).unwrap_or(0.5);
    let interval =
        parse_interval(&args.interval.or(file.interval).unwrap_or_else(|| "cp".into()))?;
    let schedule =
        match args.schedule.or(file.schedule).unwrap_or_else(|| "constant".into()).as_str() {
            "constant" => ScheduleChoice::Constant,
            "geometric" => ScheduleChoice::Geometric,
            other => bail!("unknown schedule '{other}' (expected constant|geometric)"),
        };
    let cap = args.cap.or(file.cap).or(Some(1000)).filter(|c| *c > 0);
    let features = args.features.or(file.features).unwrap_or(DEFAULT_NUM_FEATURES);
    let paths = args.paths.or(file.paths).unwrap_or(16);
    let cutoff = args.cutoff.or(file.cutoff);
    let out = args.out.or(file.out).unwrap_or_else(|| records_dir.clone());
    ensure_out_dir(&out)?;

    let records = load_records(&records_dir)?;
    let objectives: Result<Vec<Objective>> = records
        .iter()
        .map(|r| {
            Ok(objective_by_name(
                &r.meta.objective,
                r.meta.dim,
                r.meta.noise_variance,
                Seed::new(r.meta.objective_seed),
            )?)
        })
        .collect();
    let objectives = objectives?;

    let rule = match rule_name.as_str() {
        "prb" => RuleSpec::Prb {
            epsilon,
            delta,
            delta_split,
            schedule,
            num_features: features,
            interval,
            hard_cap: cap,
        },
        "acq" => RuleSpec::Acq { cutoff: cutoff.unwrap_or(epsilon / 2f64.powi(15)) },
        "delta-cb" | "delta_cb" => {
            RuleSpec::DeltaCb { cutoff: cutoff.unwrap_or(epsilon / 8.0), delta }
        }
        "delta-es" | "delta_es" => RuleSpec::DeltaEs {
            cutoff: cutoff.unwrap_or(epsilon / 16.0),
            num_paths: paths,
            num_features: features,
        },
        "oracle" => RuleSpec::Oracle { epsilon },
        "budget" => {
            let stop_at = match args.stop_budget {
                Some(t) => t,
                None => calibrate_budget(&records, &objectives, epsilon, 1.0 - delta)?,
            };
            RuleSpec::Budget { stop_at }
        }
        other => bail!("unknown rule '{other}'"),
    };

    let outcomes: Result<Vec<ReplayOutcome>> = records
        .par_iter()
        .zip(objectives.par_iter())
        .map(|(record, objective)| {
            let cfg = OptimizerConfig::light(record.meta.dim);
            Ok(replay(
                record,
                objective,
                &rule,
                epsilon,
                &cfg,
                Seed::new(record.meta.seed).child(777),
            )?)
        })
        .collect();
    let outcomes = outcomes?;

    let outcome_path = out.join(format!("outcomes-{}.jsonl", rule.name()));
    let mut outcome_file = std::io::BufWriter::new(std::fs::File::create(&outcome_path)?);
    for o in &outcomes {
        use std::io::Write;
        writeln!(outcome_file, "{}", serde_json::to_string(o)?)?;
    }

    // One summary row per problem (objective, dim, noise).
    let mut keys: Vec<(String, usize, u64)> = outcomes
        .iter()
        .map(|o| (o.objective.clone(), o.dim, o.noise_variance.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for key in keys {
        let group: Vec<ReplayOutcome> = outcomes
            .iter()
            .filter(|o| (o.objective.clone(), o.dim, o.noise_variance.to_bits()) == key)
            .cloned()
            .collect();
        rows.push(summarize(&group, epsilon)?);
    }
    let csv_path = out.join("summary.csv");
    let body = harness::summary_csv(&rows);
    if csv_path.exists() {
        let existing = std::fs::read_to_string(&csv_path)?;
        let mut combined = existing;
        for line in body.lines().skip(1) {
            combined.push_str(line);
            combined.push('\n');
        }
        std::fs::write(&csv_path, combined)?;
    } else {
        std::fs::write(&csv_path, body)?;
    }
    println!("wrote {} and {}", outcome_path.display(), csv_path.display());
    for row in &rows {
        println!(
            "{} on {} (D={}): success {:.2}, terminated {:.2}, median stop {}",
            row.rule, row.objective, row.dim, row.success_rate, row.term_rate, row.stop_q50
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// decide

#[derive(Args)]
struct DecideArgs {
    /// A single recorded run (.jsonl).
    #[arg(long)]
    record: PathBuf,
    /// Step whose posterior to rebuild.
    #[arg(long)]
    step: usize,
    /// Comma-separated point in the unit cube.
    #[arg(long)]
    point: String,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-step estimation risk; defaults to (delta/2) / (T - T0).
    #[arg(long)]
    delta_est_step: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    interval: Option<String>,
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_decide(args: DecideArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let record = RunRecord::load(&args.record)?;
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.1);
    let delta = args.delta.or(file.delta).unwrap_or(0.05);
    let interval =
        parse_interval(&args.interval.or(file.interval).unwrap_or_else(|| "cp".into()))?;
    let features = args.features.or(file.features).unwrap_or(DEFAULT_NUM_FEATURES);
    let cap = args.cap.or(file.cap).or(Some(1000)).filter(|c| *c > 0);
    let delta_est_step = args.delta_est_step.unwrap_or_else(|| {
        delta / 2.0 / (record.meta.budget - record.meta.initial).max(1) as f64
    });
    let point: Vec<f64> = args
        .point
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("bad coordinate '{v}': {e}")))
        .collect::<Result<_>>()?;

    let gp = record.posterior_at(args.step)?;
    let fmap =
        build_feature_map(&gp.hyperparams().kernel, features, Seed::new(record.meta.seed))?;
    let cfg = OptimizerConfig::light(record.meta.dim);
    let schedule = TestSchedule { hard_cap: cap, ..TestSchedule::with_defaults(delta_est_step)? };
    let lambda = 1.0 - delta / 2.0;
    let seed = Seed::new(record.meta.seed).child(args.step as u64);
    let outcome = decide_threshold(
        |i| {
            draw_regret_indicator(&gp, &fmap, &point, epsilon, &cfg, seed.child(i))
                .map(|d| d.indicator)
        },
        lambda,
        &schedule,
        interval,
    )?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// coverage / bench / sweep

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    interval: Option<String>,
    #[arg(long)]
    sims: Option<u32>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_coverage(args: CoverageArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let method = parse_interval(&args.interval.or(file.interval).unwrap_or_else(|| "cp".into()))?;
    let sims = args.sims.or(file.sims).unwrap_or(10_000);
    let delta = args.delta.or(file.delta).unwrap_or(0.1);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    ensure_out_dir(&out)?;
    let rows = harness::coverage_sim(
        method,
        &[0.05, 0.5, 0.95],
        &[10, 100],
        delta,
        sims,
        Seed::new(env_seed()),
    )?;
    let path = out.join("coverage.csv");
    std::fs::write(&path, harness::coverage_csv(&rows))?;
    println!("wrote {}", path.display());
    for r in &rows {
        println!("p={:<5} n={:<4} coverage={:.4}", r.p, r.n, r.coverage);
    }
    Ok(())
}

fn cmd_bench() -> Result<()> {
    println!("{:<12} {:>3} {:>12} {:>12} {:>8}", "objective", "D", "optimum", "re-opt", "ok");
    let mut objectives = builtin_objectives();
    objectives.push(Objective::gp_draw(2, 1e-6, Seed::new(env_seed()))?);
    for obj in &objectives {
        let cfg = OptimizerConfig {
            random_search_points: 4096 * obj.dim(),
            num_starts: 16,
            ..Default::default()
        };
        let field = CentralDiff::new(|x: &[f64]| obj.latent(x));
        let best = prbopt::optim::maximize(&field, obj.dim(), &cfg, Seed::new(7))?;
        let ok = (best.max - obj.optimum()).abs() < 1e-3;
        println!(
            "{:<12} {:>3} {:>12.6} {:>12.6} {:>8}",
            obj.name(),
            obj.dim(),
            obj.optimum(),
            best.max,
            if ok { "yes" } else { "CHECK" }
        );
    }
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated Bernoulli means.
    #[arg(long)]
    p_grid: Option<String>,
    /// Comma-separated per-step risk budgets.
    #[arg(long)]
    delta_grid: Option<String>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let lambda = args.lambda.or(file.lambda).unwrap_or(0.95);
    let p_grid = parse_grid(
        &args.p_grid.unwrap_or_else(|| "0.8,0.85,0.9,0.93,0.955,0.97,0.99,0.999".into()),
    )?;
    let delta_grid = parse_grid(&args.delta_grid.unwrap_or_else(|| "0.01,0.05,0.1".into()))?;
    let reps = args.reps.or(file.reps).unwrap_or(200);
    let cap = args.cap.or(file.cap);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    ensure_out_dir(&out)?;
    let rows = harness::decision_cost_sweep(
        &p_grid,
        &delta_grid,
        lambda,
        reps,
        cap,
        Seed::new(env_seed()),
    )?;
    let path = out.join("fig3-sweep.csv");
    std::fs::write(&path, harness::sweep_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Decide(args) => cmd_decide(args),
        Command::Coverage(args) => cmd_coverage(args),
        Command::Bench => cmd_bench(),
        Command::SweepFig3(args) => cmd_sweep(args),
    }
}
