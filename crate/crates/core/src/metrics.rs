//! Cost accounting, constraint audits, and result serialization.
//!
//! Prices are carried through the optimization in cents/kWh against per-unit
//! power; everything here converts to dollars and kWh using the feeder's
//! power base and the slot length. Constraint audits distinguish the two
//! enforcement regimes: the tight limits are checked on running averages at
//! every prefix, the wide limits per slot. Compliance statistics use the
//! realized (power-flow) voltages, not the model's — regulation is physical,
//! and any model-vs-realized discrepancy is reported on its own.

use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{Mode, SlotRecord, Trajectory};
use crate::error::{Error, Result};
use crate::feeder::FeederTree;
use crate::scenario::SlotData;
use crate::subproblem::LimitsProfile;

/// Rolling compliance window for [`violation_stats`], in seconds. EN 50160
/// judges voltage quality on 10-minute samples.
pub const COMPLIANCE_WINDOW_S: f64 = 600.0;

/// Numerical slack when classifying voltages against the tight band
/// (p.u.²). An interior-point solve pins a binding bus to the bound only to
/// its own tolerance, so without this a fully compliant run reads as one
/// long violation of ~1e-9 depth.
pub const VIOLATION_TOL: f64 = 1e-7;

/// Convert an accumulated `price x power` value (cents/kWh x p.u.) over one
/// slot into dollars.
pub fn price_pu_to_dollars(price_times_pu: f64, s_base_mva: f64, dt_s: f64) -> f64 {
    // cents -> dollars, p.u. -> kW, seconds -> hours
    price_times_pu / 100.0 * (s_base_mva * 1000.0) * (dt_s / 3600.0)
}

/// Dollar cost of one slot: realized main-grid energy plus feed-in payouts.
pub fn slot_cost_dollars(rec: &SlotRecord, tree: &FeederTree, dt_s: f64) -> f64 {
    price_pu_to_dollars(rec.economic_cost(), tree.s_base_mva(), dt_s)
}

pub fn total_cost_dollars(records: &[SlotRecord], tree: &FeederTree, dt_s: f64) -> f64 {
    records
        .iter()
        .map(|r| slot_cost_dollars(r, tree, dt_s))
        .sum()
}

/// Running mean: element `k` is the average of `values[0..=k]`.
pub fn running_average(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (k, v) in values.iter().enumerate() {
        sum += v;
        out.push(sum / (k + 1) as f64);
    }
    out
}

/// Prefix means of the per-slot dollar cost, expressed as an hourly spend
/// rate (a 30 s slot costing $2.50 burns $300/h).
pub fn time_avg_cost_usd_per_h(records: &[SlotRecord], tree: &FeederTree, dt_s: f64) -> Vec<f64> {
    let costs: Vec<f64> = records
        .iter()
        .map(|r| slot_cost_dollars(r, tree, dt_s))
        .collect();
    let dt_h = dt_s / 3600.0;
    running_average(&costs).iter().map(|c| c / dt_h).collect()
}

/// Per-bus customer energy bill for one slot: imports charged at the retail
/// tariff, surplus credited at the feed-in tariff. At most one of the two is
/// nonzero per bus.
pub fn customer_cost_dollars(
    slot: &SlotData,
    p_g: &[f64],
    retail_price: f64,
    tree: &FeederTree,
    dt_s: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; tree.n_buses()];
    for b in tree.non_root() {
        let net = p_g[b] - slot.p_c[b];
        let raw = retail_price * (-net).max(0.0) - slot.price_fit * net.max(0.0);
        out[b] = price_pu_to_dollars(raw, tree.s_base_mva(), dt_s);
    }
    out
}

/// [`customer_cost_dollars`] accumulated over a horizon. The slot list must
/// line up with the records it produced.
pub fn customer_cost_totals(
    slots: &[SlotData],
    records: &[SlotRecord],
    retail_price: f64,
    tree: &FeederTree,
    dt_s: f64,
) -> Result<Vec<f64>> {
    if slots.len() < records.len() {
        return Err(Error::BadConfig(format!(
            "{} records but only {} slots of scenario data",
            records.len(),
            slots.len()
        )));
    }
    let mut out = vec![0.0; tree.n_buses()];
    for (slot, rec) in slots.iter().zip(records) {
        for (acc, c) in out.iter_mut().zip(customer_cost_dollars(
            slot,
            &rec.p_g,
            retail_price,
            tree,
            dt_s,
        )) {
            *acc += c;
        }
    }
    Ok(out)
}

/// What the utility pays for one slot: wholesale energy and feed-in payouts,
/// minus retail revenue on the energy customers imported. Summed against the
/// per-bus customer bills the tariff flows cancel, leaving the wholesale
/// bill alone.
pub fn utility_cost_dollars(
    rec: &SlotRecord,
    retail_price: f64,
    tree: &FeederTree,
    dt_s: f64,
) -> f64 {
    price_pu_to_dollars(
        rec.price_main * rec.p0_ac + rec.price_fit * rec.feed_in - retail_price * rec.imported,
        tree.s_base_mva(),
        dt_s,
    )
}

pub fn utility_cost_total(
    records: &[SlotRecord],
    retail_price: f64,
    tree: &FeederTree,
    dt_s: f64,
) -> f64 {
    records
        .iter()
        .map(|r| utility_cost_dollars(r, retail_price, tree, dt_s))
        .sum()
}

/// Running-average residuals of the on-average constraints, at every prefix.
///
/// Outer index is the slot, inner the bus (entry 0 always zero). A run
/// converges when the final rows vanish; the prefix history shows how fast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicResiduals {
    /// `[(1/t) sum(p_g^2 + q_g^2) - s^2]_+` per bus and prefix, p.u.^2.
    pub apparent_excess: Vec<Vec<f64>>,
    /// Distance of the running-average model voltage from the tight band,
    /// p.u.^2; zero inside the band.
    pub voltage_distance: Vec<Vec<f64>>,
}

impl ErgodicResiduals {
    /// Residuals at the final prefix: `(apparent, voltage)` per bus.
    pub fn final_per_bus(&self) -> (&[f64], &[f64]) {
        (
            self.apparent_excess
                .last()
                .map(Vec::as_slice)
                .unwrap_or(&[]),
            self.voltage_distance
                .last()
                .map(Vec::as_slice)
                .unwrap_or(&[]),
        )
    }

    /// Worst final residuals over all buses: `(apparent, voltage)`.
    pub fn final_worst(&self) -> (f64, f64) {
        let (s, v) = self.final_per_bus();
        (
            s.iter().cloned().fold(0.0, f64::max),
            v.iter().cloned().fold(0.0, f64::max),
        )
    }
}

/// Audit the on-average constraints of a trajectory against the tight limits
/// in `limits`, per bus and per prefix.
pub fn ergodic_feasibility(
    tree: &FeederTree,
    records: &[SlotRecord],
    limits: &LimitsProfile,
) -> Result<ErgodicResiduals> {
    if records.is_empty() {
        return Err(Error::BadConfig("no slots to audit".into()));
    }
    let n = tree.n_buses();
    let mut s_sum = vec![0.0; n];
    let mut v_sum = vec![0.0; n];
    let mut out = ErgodicResiduals {
        apparent_excess: Vec::with_capacity(records.len()),
        voltage_distance: Vec::with_capacity(records.len()),
    };
    for (k, rec) in records.iter().enumerate() {
        let count = (k + 1) as f64;
        let mut s_row = vec![0.0; n];
        let mut v_row = vec![0.0; n];
        for b in tree.non_root() {
            s_sum[b] += rec.p_g[b] * rec.p_g[b] + rec.q_g[b] * rec.q_g[b];
            v_sum[b] += rec.v_model[b];
            let s = tree.bus(b).s_pu;
            s_row[b] = (s_sum[b] / count - s * s).max(0.0);
            let v_avg = v_sum[b] / count;
            v_row[b] = (limits.v_l - v_avg).max(v_avg - limits.v_u).max(0.0);
        }
        out.apparent_excess.push(s_row);
        out.voltage_distance.push(v_row);
    }
    Ok(out)
}

/// Voltage-quality compliance of the realized voltages against the tight
/// band, in the style of the 10-minute statistics regulators use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationStats {
    /// Fraction of slots where any bus's power-flow voltage leaves the tight
    /// band.
    pub violation_fraction: f64,
    /// Worst fraction of clean slots over any rolling window; 1.0 when every
    /// window is fully compliant.
    pub worst_window_compliance: f64,
    /// Rolling window length in slots (10 minutes' worth, at least one).
    pub window_slots: usize,
}

pub fn violation_stats(
    tree: &FeederTree,
    records: &[SlotRecord],
    limits: &LimitsProfile,
    dt_s: f64,
) -> ViolationStats {
    let window = ((COMPLIANCE_WINDOW_S / dt_s).round() as usize)
        .max(1)
        .min(records.len().max(1));
    let violating: Vec<bool> = records
        .iter()
        .map(|rec| {
            tree.non_root().any(|b| {
                rec.v_ac[b] < limits.v_l - VIOLATION_TOL || rec.v_ac[b] > limits.v_u + VIOLATION_TOL
            })
        })
        .collect();
    let total = violating.iter().filter(|&&v| v).count();
    let violation_fraction = if violating.is_empty() {
        0.0
    } else {
        total as f64 / violating.len() as f64
    };
    let mut worst = 1.0f64;
    if !violating.is_empty() {
        let mut in_window = violating[..window].iter().filter(|&&v| v).count();
        worst = 1.0 - in_window as f64 / window as f64;
        for k in window..violating.len() {
            in_window += violating[k] as usize;
            in_window -= violating[k - window] as usize;
            worst = worst.min(1.0 - in_window as f64 / window as f64);
        }
    }
    ViolationStats {
        violation_fraction,
        worst_window_compliance: worst,
        window_slots: window,
    }
}

/// Per-slot gap between the voltages the subproblem's network model
/// predicted and what the power flow realized, worst bus per slot.
///
/// Both domains are kept: the squared domain is what the models trade in,
/// the magnitude domain is what a voltmeter reads. A linearized model's
/// lossless flows overstate voltage by roughly twice the resistance-weighted
/// downstream losses, so its squared-domain error grows along the trunk
/// while the magnitude error stays near half of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFidelity {
    /// Worst `|sqrt(v_model) - sqrt(v_ac)|` over non-root buses, per slot.
    pub error_pu: Vec<f64>,
    /// Worst `|v_model - v_ac|` over non-root buses, per slot.
    pub error_pu2: Vec<f64>,
}

impl ModelFidelity {
    pub fn max_pu(&self) -> f64 {
        self.error_pu.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_pu2(&self) -> f64 {
        self.error_pu2.iter().cloned().fold(0.0, f64::max)
    }

    /// Slots whose squared-domain error exceeds `threshold`, with the error.
    pub fn slots_over_pu2(&self, threshold: f64) -> Vec<(usize, f64)> {
        self.error_pu2
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > threshold)
            .map(|(t, &e)| (t, e))
            .collect()
    }
}

pub fn model_fidelity(tree: &FeederTree, records: &[SlotRecord]) -> ModelFidelity {
    let mut out = ModelFidelity {
        error_pu: Vec::with_capacity(records.len()),
        error_pu2: Vec::with_capacity(records.len()),
    };
    for rec in records {
        let mut worst_pu = 0.0f64;
        let mut worst_pu2 = 0.0f64;
        for b in tree.non_root() {
            worst_pu = worst_pu.max((rec.v_model[b].sqrt() - rec.v_ac[b].sqrt()).abs());
            worst_pu2 = worst_pu2.max((rec.v_model[b] - rec.v_ac[b]).abs());
        }
        out.error_pu.push(worst_pu);
        out.error_pu2.push(worst_pu2);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub from_grid_mwh: f64,
    pub demand_mwh: f64,
    pub available_mwh: f64,
    pub curtailed_mwh: f64,
    pub feed_in_mwh: f64,
}

/// Final per-bus residuals of the on-average constraints (the last row of
/// [`ErgodicResiduals`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityResiduals {
    pub apparent_excess: Vec<f64>,
    pub voltage_distance: Vec<f64>,
}

/// One run boiled down to the numbers worth comparing across policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mode: String,
    /// Subproblem network model, or `"ac"` when no subproblem ran.
    pub model: String,
    pub mu: Option<f64>,
    pub n_slots: usize,
    pub dt_s: f64,
    pub total_cost_usd: f64,
    /// Prefix-mean cost as an hourly rate, one entry per slot.
    pub time_avg_cost_usd_per_h: Vec<f64>,
    pub feasibility_residuals: FeasibilityResiduals,
    pub violation: ViolationStats,
    /// Generation turned away over the horizon; tiny negative round-off per
    /// slot is clamped so the total stays a physical energy.
    pub total_curtailment_kwh: f64,
    /// Mean power-flow voltage magnitude (p.u., not squared) over the
    /// non-root buses, one entry per slot.
    pub grid_avg_voltage_series: Vec<f64>,
    pub max_exactness_gap: Option<f64>,
    pub energy: EnergyTotals,
    /// Curtailed over available generation; zero when nothing was available.
    pub curtailment_fraction: f64,
    pub v_ac_min: f64,
    pub v_ac_max: f64,
    pub final_dual_norm: f64,
    pub mean_solver_iterations: f64,
}

/// Collapse a trajectory into a [`RunSummary`].
pub fn summarize(tree: &FeederTree, traj: &Trajectory, label: &str) -> Result<RunSummary> {
    let records = &traj.records;
    if records.is_empty() {
        return Err(Error::BadConfig("no slots to summarize".into()));
    }
    let dt_s = traj.config.dt_s;
    let residuals = ergodic_feasibility(tree, records, &traj.config.limits)?;
    let (apparent_excess, voltage_distance) = residuals.final_per_bus();
    let violation = violation_stats(tree, records, &traj.config.limits, dt_s);
    let to_mwh = |pu_slots: f64| pu_slots * tree.s_base_mva() * dt_s / 3600.0;
    let energy = EnergyTotals {
        from_grid_mwh: to_mwh(records.iter().map(|r| r.p0_ac).sum()),
        demand_mwh: to_mwh(records.iter().map(|r| r.demand).sum()),
        available_mwh: to_mwh(records.iter().map(|r| r.available).sum()),
        curtailed_mwh: to_mwh(records.iter().map(|r| r.curtailed).sum()),
        feed_in_mwh: to_mwh(records.iter().map(|r| r.feed_in).sum()),
    };
    let curtailment_fraction = if energy.available_mwh > 0.0 {
        energy.curtailed_mwh / energy.available_mwh
    } else {
        0.0
    };
    let total_curtailment_kwh = to_mwh(records.iter().map(|r| r.curtailed.max(0.0)).sum()) * 1000.0;
    let grid_avg_voltage_series = records
        .iter()
        .map(|rec| {
            tree.non_root().map(|b| rec.v_ac[b].sqrt()).sum::<f64>() / (tree.n_buses() - 1) as f64
        })
        .collect();
    let mut v_ac_min = f64::INFINITY;
    let mut v_ac_max = f64::NEG_INFINITY;
    for rec in records {
        for b in tree.non_root() {
            v_ac_min = v_ac_min.min(rec.v_ac[b]);
            v_ac_max = v_ac_max.max(rec.v_ac[b]);
        }
    }
    let max_exactness_gap = records
        .iter()
        .filter_map(|r| r.exactness_gap)
        .fold(None, |acc: Option<f64>, g| {
            Some(acc.map_or(g, |a| a.max(g)))
        });
    Ok(RunSummary {
        label: label.to_string(),
        mode: traj.config.mode.as_str().to_string(),
        model: match traj.config.mode {
            Mode::NoControl => "ac".to_string(),
            _ => traj.config.model.as_str().to_string(),
        },
        mu: matches!(traj.config.mode, Mode::Eem).then_some(traj.config.mu),
        n_slots: records.len(),
        dt_s,
        total_cost_usd: total_cost_dollars(records, tree, dt_s),
        time_avg_cost_usd_per_h: time_avg_cost_usd_per_h(records, tree, dt_s),
        feasibility_residuals: FeasibilityResiduals {
            apparent_excess: apparent_excess.to_vec(),
            voltage_distance: voltage_distance.to_vec(),
        },
        violation,
        total_curtailment_kwh,
        grid_avg_voltage_series,
        max_exactness_gap,
        energy,
        curtailment_fraction,
        v_ac_min,
        v_ac_max,
        final_dual_norm: traj.final_dual.norm(),
        mean_solver_iterations: records
            .iter()
            .map(|r| r.solver_iterations as f64)
            .sum::<f64>()
            / records.len() as f64,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.12e}")).unwrap_or_default()
}

/// Write one row per slot in the documented column order. Voltages are
/// squared magnitudes; `exactness_gap` is left empty when no cone model ran.
/// `note`, when given, lands as a trailing `#`-prefixed marker row so
/// truncated runs are visible without breaking comment-aware CSV readers.
pub fn write_slot_csv(
    tree: &FeederTree,
    records: &[SlotRecord],
    mode: &str,
    model: &str,
    dt_s: f64,
    path: impl AsRef<Path>,
    note: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let to_csv = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record([
        "t",
        "mode",
        "model",
        "cost_usd",
        "time_avg_cost_usd_per_h",
        "p0_pu",
        "curtailment_pu_total",
        "v_min_ac",
        "v_max_ac",
        "v_min_model",
        "v_max_model",
        "dual_norm",
        "exactness_gap",
        "solver_iters",
    ])
    .map_err(to_csv)?;
    let time_avg = time_avg_cost_usd_per_h(records, tree, dt_s);
    for (rec, avg) in records.iter().zip(&time_avg) {
        let span = |vs: &[f64]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for b in tree.non_root() {
                lo = lo.min(vs[b]);
                hi = hi.max(vs[b]);
            }
            (lo, hi)
        };
        let (vm_lo, vm_hi) = span(&rec.v_model);
        let (va_lo, va_hi) = span(&rec.v_ac);
        w.write_record([
            rec.t.to_string(),
            mode.to_string(),
            model.to_string(),
            format!("{:.12e}", slot_cost_dollars(rec, tree, dt_s)),
            format!("{avg:.12e}"),
            format!("{:.12e}", rec.p0_ac),
            format!("{:.12e}", rec.curtailed),
            format!("{va_lo:.12e}"),
            format!("{va_hi:.12e}"),
            format!("{vm_lo:.12e}"),
            format!("{vm_hi:.12e}"),
            format!("{:.12e}", rec.dual_norm),
            fmt_opt(rec.exactness_gap),
            rec.solver_iterations.to_string(),
        ])
        .map_err(to_csv)?;
    }
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    if let Some(note) = note {
        writeln!(inner, "# {note}").map_err(|e| Error::io(path, e))?;
    }
    inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Wide per-bus voltage table: one `v_<label>` column per non-root bus,
/// realized (power-flow) voltages when `use_ac`, model voltages otherwise.
pub fn write_voltage_csv(
    tree: &FeederTree,
    records: &[SlotRecord],
    path: impl AsRef<Path>,
    use_ac: bool,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let to_csv = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut header = vec!["t".to_string()];
    header.extend(tree.non_root().map(|b| format!("v_{}", tree.label(b))));
    w.write_record(&header).map_err(to_csv)?;
    for rec in records {
        let vs = if use_ac { &rec.v_ac } else { &rec.v_model };
        let mut row = vec![rec.t.to_string()];
        row.extend(tree.non_root().map(|b| format!("{:.12e}", vs[b])));
        w.write_record(&row).map_err(to_csv)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_summary_json(summaries: &[RunSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&file, summaries).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut file = file;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
