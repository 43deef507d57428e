//! Batch execution of independent runs (replica sweeps, policy comparisons).
//!
//! Each [`Job`] is a policy configuration plus its own slot sequence;
//! sharing one materialized scenario across jobs gives common random numbers
//! for paired comparisons. Jobs are embarrassingly parallel: with the
//! `parallel` feature (on by default) [`run_jobs`] fans them out across a
//! rayon pool, one job per task, while each job's slots stay strictly
//! sequential — the dual state is a recursion, so intra-run order matters.
//! Results are returned in input order either way, and the two execution
//! paths are bit-for-bit identical.

use crate::controller::{run_horizon, ControllerConfig, Trajectory};
use crate::error::Result;
use crate::feeder::FeederTree;
use crate::scenario::SlotData;

#[derive(Debug, Clone)]
pub struct Job {
    pub label: String,
    pub config: ControllerConfig,
    pub slots: Vec<SlotData>,
}

impl Job {
    pub fn new(label: impl Into<String>, config: ControllerConfig, slots: Vec<SlotData>) -> Self {
        Job {
            label: label.into(),
            config,
            slots,
        }
    }
}

/// Run every job, one thread per job when the `parallel` feature is enabled.
/// Failures are reported per job so one bad replica does not void a sweep.
#[cfg(feature = "parallel")]
pub fn run_jobs(tree: &FeederTree, jobs: &[Job]) -> Vec<Result<Trajectory>> {
    use rayon::prelude::*;
    jobs.par_iter()
        .map(|job| run_horizon(tree, &job.slots, &job.config))
        .collect()
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_jobs(tree: &FeederTree, jobs: &[Job]) -> Vec<Result<Trajectory>> {
    run_jobs_sequential(tree, jobs)
}

/// Always-sequential execution of the same jobs; exists so the parallel path
/// has a reference to benchmark and test against.
pub fn run_jobs_sequential(tree: &FeederTree, jobs: &[Job]) -> Vec<Result<Trajectory>> {
    jobs.iter()
        .map(|job| run_horizon(tree, &job.slots, &job.config))
        .collect()
}
