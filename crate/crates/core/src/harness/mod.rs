//! Experiment surface: evaluation reports, the steps sweep, the time-budget
//! cost model and trajectory traces. The `seqdet` binary wraps these.

mod budget;
mod report;
mod sweep;
mod trace;

pub use budget::{estimate_budget, BudgetCostModel};
pub use report::{evaluate, evaluate_detections, ClassRow, EvalReport};
pub use sweep::{steps_sweep, sweep_table, SweepConfig, SweepMode, SweepRow};
pub use trace::trace_text;
