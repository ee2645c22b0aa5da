//! Comparative replay behavior of the baseline rules against PRB on the
//! known-model 2D fixture, with the calibrated cutoff fractions.

use prbopt::harness::{replay, run_bo, BoConfig, Objective, ReplayOutcome, RuleSpec, RunRecord, ScheduleChoice};
use prbopt::model::{GPHyperparams, KernelSpec, Link};
use prbopt::optim::OptimizerConfig;
use prbopt::seed::Seed;
use prbopt::seqtest::IntervalMethod;
use rayon::prelude::*;

fn known_model_records(n_runs: u64) -> Vec<(Objective, RunRecord)> {
    (0..n_runs)
        .into_par_iter()
        .map(|seed| {
            let run_seed = Seed::new(4200 + seed);
            let objective_seed = run_seed.child(500);
            let objective = Objective::gp_draw(2, 1e-6, objective_seed).unwrap();
            let hyper = GPHyperparams::new(
                0.0,
                KernelSpec::isotropic(1.0, 2f64.sqrt() / 4.0, 2).unwrap(),
                1e-6,
                Link::Identity,
            )
            .unwrap();
            let mut cfg = BoConfig::new(64, 5).with_fixed_model(&hyper);
            cfg.acquisition.optimizer = OptimizerConfig::light(2);
            let mut record = run_bo(&objective, &cfg, run_seed).unwrap();
            record.meta.objective_seed = objective_seed.0;
            (objective, record)
        })
        .collect()
}

fn median_stop(outcomes: &[ReplayOutcome]) -> f64 {
    let mut stops: Vec<f64> = outcomes.iter().map(|o| o.stop_step as f64).collect();
    stops.sort_by(f64::total_cmp);
    let n = stops.len();
    if n % 2 == 0 { 0.5 * (stops[n / 2 - 1] + stops[n / 2]) } else { stops[n / 2] }
}

fn replay_all(pairs: &[(Objective, RunRecord)], rule: &RuleSpec, epsilon: f64) -> Vec<ReplayOutcome> {
    pairs
        .par_iter()
        .map(|(objective, record)| {
            replay(
                record,
                objective,
                rule,
                epsilon,
                &OptimizerConfig::light(2),
                Seed::new(record.meta.seed).child(777),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn calibrated_baselines_bracket_prb_stopping_times() {
    let epsilon = 0.1;
    let pairs = known_model_records(10);

    let prb = RuleSpec::Prb {
        epsilon,
        delta: 0.05,
        delta_split: 0.5,
        schedule: ScheduleChoice::Constant,
        num_features: 1024,
        interval: IntervalMethod::ClopperPearson,
        hard_cap: Some(600),
    };
    let prb_median = median_stop(&replay_all(&pairs, &prb, epsilon));

    // Calibrated acquisition cutoff eps / 2^15 stops later than PRB.
    let acq = RuleSpec::Acq { cutoff: epsilon / 2f64.powi(15) };
    let acq_median = median_stop(&replay_all(&pairs, &acq, epsilon));
    assert!(
        acq_median >= prb_median,
        "acquisition rule should lag PRB: {acq_median} vs {prb_median}"
    );

    // Calibrated expected-supremum cutoff eps / 2^4 lands near PRB.
    let es = RuleSpec::DeltaEs { cutoff: epsilon / 16.0, num_paths: 8, num_features: 512 };
    let es_median = median_stop(&replay_all(&pairs, &es, epsilon));
    assert!(
        es_median >= 0.5 * prb_median && es_median <= 1.5 * prb_median,
        "expected-supremum rule strayed from PRB: {es_median} vs {prb_median}"
    );
    println!("medians: prb {prb_median}, acq {acq_median}, delta-es {es_median}");
}
