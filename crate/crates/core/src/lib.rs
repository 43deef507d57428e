//! Energy management for radial distribution feeders with high solar
//! penetration.
//!
//! The core policy enforces tight inverter and voltage limits *on long-run
//! time averages* instead of slot by slot: each control slot solves a convex
//! network subproblem under wide instantaneous limits, augmented with prices
//! (Lagrange multipliers) on the averaged constraints, and then updates those
//! prices by a projected subgradient step. Trading a bounded, tunable amount
//! of short-term slack for averaged feasibility recovers curtailed renewable
//! energy relative to per-slot enforcement. Deterministic per-slot
//! enforcement and uncontrolled injection ship as baselines.
//!
//! Module map:
//!
//! * [`feeder`] — radial network datasets, validation, per-unit conversion,
//!   and the bundled 56-bus 12 kV test feeder.
//! * [`scenario`] — slot sequences (demand, available solar, prices): a
//!   synthetic Gaussian generator, resampled CSV traces, and a plain
//!   per-slot CSV format.
//! * [`acpf`] — exact power-flow sweep used to audit every commanded
//!   setpoint against the real network equations.
//! * [`conic`] — a small second-order-cone program builder and the
//!   interior-point bridge behind every subproblem.
//! * [`subproblem`] — the per-slot programs: an exact branch-flow cone
//!   relaxation and a linearized variant with quadratic loss costing.
//! * [`controller`] — the three policies, the dual update, and the horizon
//!   runner.
//! * [`metrics`] — dollar/MWh accounting, constraint audits, CSV/JSON output.
//! * [`runner`] — batch execution of independent runs, in parallel behind
//!   the `parallel` feature (on by default).
//!
//! Conventions used everywhere: buses are renumbered on load so index 0 is
//! the substation and every parent precedes its children; per-bus vectors
//! have length `n_buses` with entry 0 unused unless stated; line quantities
//! are indexed by their downstream bus; power is in per-unit on the feeder's
//! MVA base, voltages are squared magnitudes in per-unit, and prices are in
//! cents/kWh until the metrics layer converts to dollars.

pub mod acpf;
pub mod conic;
pub mod controller;
pub mod error;
pub mod feeder;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod subproblem;

pub use controller::{
    dual_update, run_horizon, subgradient_bound_sq, ControllerConfig, Mode, SlotRecord, Trajectory,
};
pub use error::{Error, Result};
pub use feeder::{builtin_sce56, builtin_sce56_with, load_feeder, load_feeder_with, FeederTree};
pub use metrics::{summarize, RunSummary};
pub use runner::{run_jobs, run_jobs_sequential, Job};
pub use scenario::{ScenarioSpec, SlotData};
pub use subproblem::{solve_slot, DualState, GridModel, LimitsProfile, SubproblemSolution};
