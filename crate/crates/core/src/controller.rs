//! Slot-by-slot inverter control policies and the horizon runner.
//!
//! Three policies share one record format so runs are directly comparable:
//!
//! * [`Mode::Eem`] — the averaging controller. Tight apparent-power and
//!   voltage limits are enforced only on long-run averages; each slot solves
//!   the dualized subproblem under wide instantaneous limits, then takes a
//!   projected subgradient step on the multipliers ([`dual_update`]). Model
//!   voltages drive the update, so the controller needs no extra telemetry.
//! * [`Mode::Dem`] — the deterministic baseline: the same subproblem with
//!   zero multipliers and every limit tightened to its average-case value on
//!   each slot individually.
//! * [`Mode::NoControl`] — inverters inject everything available at unity
//!   power factor; no optimization at all.
//!
//! Every slot is additionally evaluated through the exact power flow with the
//! commanded setpoints, so each [`SlotRecord`] carries both the model's view
//! and the realized grid state.

use serde::{Deserialize, Serialize};

use crate::acpf::{self, solve_radial_acpf};
use crate::conic::SolveOptions;
use crate::error::{Error, Result};
use crate::feeder::FeederTree;
use crate::scenario::SlotData;
use crate::subproblem::{solve_slot, DualState, GridModel, LimitsProfile, Setpoints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Eem,
    Dem,
    NoControl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Eem => "eem",
            Mode::Dem => "dem",
            Mode::NoControl => "no_control",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub mode: Mode,
    /// Network model inside the per-slot subproblem; ignored by
    /// [`Mode::NoControl`], which runs no subproblem.
    pub model: GridModel,
    /// Dual step size; only [`Mode::Eem`] uses it.
    pub mu: f64,
    pub limits: LimitsProfile,
    /// Substation squared voltage.
    pub v0: f64,
    /// Slot length in seconds.
    pub dt_s: f64,
    #[serde(skip)]
    pub solve: SolveOptions,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mode: Mode::Eem,
            model: GridModel::Bfm,
            mu: 0.1,
            limits: LimitsProfile::default(),
            v0: 1.0,
            dt_s: 30.0,
            solve: SolveOptions::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        if matches!(self.mode, Mode::Eem) && !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::BadConfig(format!(
                "dual step size must be positive, got {}",
                self.mu
            )));
        }
        if !(self.v0.is_finite() && self.v0 > 0.0) {
            return Err(Error::BadConfig(format!(
                "substation voltage must be positive, got {}",
                self.v0
            )));
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(Error::BadConfig(format!(
                "slot length must be positive, got {}",
                self.dt_s
            )));
        }
        Ok(())
    }
}

/// Everything observable about one control slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub price_main: f64,
    pub price_fit: f64,
    /// Commanded injections (length `n_buses`, entry 0 zero).
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    /// Squared voltages as the subproblem's network model saw them; equal to
    /// `v_ac` when no model was solved.
    pub v_model: Vec<f64>,
    /// Squared voltages from the exact power flow under the commanded
    /// setpoints.
    pub v_ac: Vec<f64>,
    pub p0_model: f64,
    pub p0_ac: f64,
    /// Total exported surplus `sum([p_g - p_c]_+)`.
    pub feed_in: f64,
    /// Total shortfall covered by the grid `sum([p_c - p_g]_+)`.
    pub imported: f64,
    /// Total spilled generation `sum(pg_max - p_g)`.
    pub curtailed: f64,
    /// Total available generation `sum(pg_max)`.
    pub available: f64,
    /// Total active demand `sum(p_c)`.
    pub demand: f64,
    /// Euclidean norm of the multipliers after this slot's update (zero for
    /// the baselines).
    pub dual_norm: f64,
    /// Dual-function sample from the subproblem solve, when one ran.
    pub g_value: Option<f64>,
    /// Relaxation slack from the branch-flow model, when that model ran.
    pub exactness_gap: Option<f64>,
    pub solver_iterations: usize,
}

impl SlotRecord {
    /// Economic cost of this slot in price-units x p.u. power: main-grid
    /// energy at the realized substation draw plus feed-in payouts.
    pub fn economic_cost(&self) -> f64 {
        self.price_main * self.p0_ac + self.price_fit * self.feed_in
    }

    /// Same cost evaluated at the subproblem's own substation estimate.
    pub fn model_cost(&self) -> f64 {
        self.price_main * self.p0_model + self.price_fit * self.feed_in
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: ControllerConfig,
    pub records: Vec<SlotRecord>,
    pub final_dual: DualState,
}

/// Projected subgradient ascent on the multipliers of the on-average limits:
///
/// ```text
/// nu       <- [nu       + mu * (p_g^2 + q_g^2 - s^2)]_+
/// xi_lower <- [xi_lower + mu * (v_l - v)]_+
/// xi_upper <- [xi_upper + mu * (v - v_u)]_+
/// ```
///
/// using the tight limits and the model voltages from the current slot.
pub fn dual_update(
    tree: &FeederTree,
    dual: &mut DualState,
    setpoints: &Setpoints,
    v_model: &[f64],
    limits: &LimitsProfile,
    mu: f64,
) {
    for b in tree.non_root() {
        let s = tree.bus(b).s_pu;
        let load = setpoints.p_g[b] * setpoints.p_g[b] + setpoints.q_g[b] * setpoints.q_g[b];
        dual.nu[b] = (dual.nu[b] + mu * (load - s * s)).max(0.0);
        dual.xi_lower[b] = (dual.xi_lower[b] + mu * (limits.v_l - v_model[b])).max(0.0);
        dual.xi_upper[b] = (dual.xi_upper[b] + mu * (v_model[b] - limits.v_u)).max(0.0);
    }
}

/// Conservative bound on the squared norm of the dual subgradient over the
/// wide operating box; the convergence guarantee degrades the time-average
/// constraint residuals by `mu * H / 2`, so this is the constant that trades
/// step size against asymptotic accuracy.
///
/// Note the per-bus terms are `s_wide^2` and `dv^2` even though the
/// subgradient entries are themselves squared quantities (`p^2 + q^2 - s^2`
/// and band distances of squared voltages), whose squares would be fourth
/// powers. In per-unit, where all of these sit near or below one, the
/// quadratic form is the larger and therefore still a valid bound; treat the
/// value as a step-size heuristic rather than a tight constant.
pub fn subgradient_bound_sq(tree: &FeederTree, limits: &LimitsProfile) -> f64 {
    let dv = limits.v_u_wide - limits.v_l_wide;
    tree.non_root()
        .map(|b| {
            let s_wide = limits.overload_factor * tree.bus(b).s_pu;
            s_wide * s_wide + 2.0 * dv * dv
        })
        .sum()
}

fn evaluate_ac(
    tree: &FeederTree,
    slot: &SlotData,
    setpoints: &Setpoints,
    v0: f64,
) -> Result<acpf::PfSolution> {
    let n = tree.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for b in tree.non_root() {
        p[b] = setpoints.p_g[b] - slot.p_c[b];
        q[b] = setpoints.q_g[b] + tree.bus(b).shunt_pu - slot.q_c[b];
    }
    solve_radial_acpf(tree, &p, &q, v0, acpf::DEFAULT_TOL, acpf::DEFAULT_MAX_ITER)
}

struct SlotTotals {
    feed_in: f64,
    imported: f64,
    curtailed: f64,
    available: f64,
    demand: f64,
}

fn totals(tree: &FeederTree, slot: &SlotData, setpoints: &Setpoints) -> SlotTotals {
    let mut sums = SlotTotals {
        feed_in: 0.0,
        imported: 0.0,
        curtailed: 0.0,
        available: 0.0,
        demand: 0.0,
    };
    for b in tree.non_root() {
        sums.feed_in += (setpoints.p_g[b] - slot.p_c[b]).max(0.0);
        sums.imported += (slot.p_c[b] - setpoints.p_g[b]).max(0.0);
        sums.curtailed += slot.pg_max[b] - setpoints.p_g[b];
        sums.available += slot.pg_max[b];
        sums.demand += slot.p_c[b];
    }
    sums
}

fn optimized_step(
    tree: &FeederTree,
    slot: &SlotData,
    config: &ControllerConfig,
    dual: &mut DualState,
) -> Result<SlotRecord> {
    let (limits, slot_dual) = match config.mode {
        Mode::Eem => (config.limits, dual.clone()),
        _ => (config.limits.tight(), DualState::zeros(tree.n_buses())),
    };
    let sol = solve_slot(
        tree,
        slot,
        &slot_dual,
        &limits,
        config.model,
        config.v0,
        config.solve,
    )?;
    if matches!(config.mode, Mode::Eem) {
        dual_update(
            tree,
            dual,
            &sol.setpoints,
            &sol.v_model,
            &config.limits,
            config.mu,
        );
    }
    let pf = evaluate_ac(tree, slot, &sol.setpoints, config.v0)?;
    let sums = totals(tree, slot, &sol.setpoints);
    Ok(SlotRecord {
        t: slot.t,
        price_main: slot.price_main,
        price_fit: slot.price_fit,
        p_g: sol.setpoints.p_g,
        q_g: sol.setpoints.q_g,
        v_model: sol.v_model,
        v_ac: pf.v,
        p0_model: sol.p0_model,
        p0_ac: pf.p0,
        feed_in: sums.feed_in,
        imported: sums.imported,
        curtailed: sums.curtailed,
        available: sums.available,
        demand: sums.demand,
        dual_norm: dual.norm(),
        g_value: Some(sol.g_value),
        exactness_gap: sol.exactness_gap,
        solver_iterations: sol.iterations,
    })
}

fn passthrough_step(
    tree: &FeederTree,
    slot: &SlotData,
    config: &ControllerConfig,
) -> Result<SlotRecord> {
    let n = tree.n_buses();
    let mut setpoints = Setpoints {
        p_g: vec![0.0; n],
        q_g: vec![0.0; n],
    };
    for b in tree.non_root() {
        setpoints.p_g[b] = slot.pg_max[b];
    }
    let pf = evaluate_ac(tree, slot, &setpoints, config.v0)?;
    let sums = totals(tree, slot, &setpoints);
    Ok(SlotRecord {
        t: slot.t,
        price_main: slot.price_main,
        price_fit: slot.price_fit,
        p_g: setpoints.p_g,
        q_g: setpoints.q_g,
        v_model: pf.v.clone(),
        v_ac: pf.v,
        p0_model: pf.p0,
        p0_ac: pf.p0,
        feed_in: sums.feed_in,
        imported: sums.imported,
        curtailed: sums.curtailed,
        available: sums.available,
        demand: sums.demand,
        dual_norm: 0.0,
        g_value: None,
        exactness_gap: None,
        solver_iterations: 0,
    })
}

/// Run one policy over a slot sequence. Multipliers start at zero. A failed
/// slot aborts the run with [`Error::RunAborted`], which carries the records
/// completed so far; nothing after the failure is fabricated.
pub fn run_horizon(
    tree: &FeederTree,
    slots: &[SlotData],
    config: &ControllerConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if slots.is_empty() {
        return Err(Error::BadConfig("the slot sequence is empty".into()));
    }
    let mut dual = DualState::zeros(tree.n_buses());
    let mut records = Vec::with_capacity(slots.len());
    for slot in slots {
        let step = match config.mode {
            Mode::NoControl => passthrough_step(tree, slot, config),
            _ => optimized_step(tree, slot, config, &mut dual),
        };
        match step {
            Ok(record) => records.push(record),
            Err(e) => {
                return Err(Error::RunAborted {
                    t: slot.t,
                    partial: records,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(Trajectory {
        config: config.clone(),
        records,
        final_dual: dual,
    })
}

/// Time-averaged constraint residuals of a trajectory against the tight
/// limits: worst average apparent-power overshoot (in p.u.^2) and worst
/// average voltage-band overshoot (in p.u.^2), each maximized over buses.
pub fn average_residuals(
    tree: &FeederTree,
    records: &[SlotRecord],
    limits: &LimitsProfile,
) -> (f64, f64) {
    let n = tree.n_buses();
    let t = records.len() as f64;
    let mut s_avg = vec![0.0; n];
    let mut v_avg = vec![0.0; n];
    for rec in records {
        for b in tree.non_root() {
            s_avg[b] += (rec.p_g[b] * rec.p_g[b] + rec.q_g[b] * rec.q_g[b]) / t;
            v_avg[b] += rec.v_model[b] / t;
        }
    }
    let mut worst_s: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for b in tree.non_root() {
        let s = tree.bus(b).s_pu;
        worst_s = worst_s.max(s_avg[b] - s * s);
        worst_v = worst_v
            .max(limits.v_l - v_avg[b])
            .max(v_avg[b] - limits.v_u);
    }
    (worst_s, worst_v)
}
