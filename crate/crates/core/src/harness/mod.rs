//! Experiment harness: benchmark objectives, recorded BO runs, replay under
//! any stopping rule, and the summary/sweep machinery behind the CLI.

pub mod objectives;
pub mod record;
pub mod replay;
pub mod run;
pub mod summary;

pub use objectives::{builtin_objectives, objective_by_name, Objective};
pub use record::{load_records, HyperparamsRecord, ModelMode, RunMeta, RunRecord, StepRecord};
pub use replay::{calibrate_budget, replay, ReplayOutcome, RuleSpec, ScheduleChoice};
pub use run::{run_bo, BoConfig};
pub use summary::{
    coverage_csv, coverage_sim, decision_cost_sweep, log10_regret, summarize, summary_csv,
    sweep_csv, CoverageRow, SummaryRow, SweepRow, COVERAGE_CSV_HEADER, LOG_REGRET_FLOOR,
    SUMMARY_CSV_HEADER, SWEEP_CSV_HEADER,
};
