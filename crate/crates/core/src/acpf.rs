//! Exact AC power flow on radial feeders via backward/forward sweeps.
//!
//! Given net complex injections at every non-root bus and a fixed substation
//! voltage, the sweep alternates between accumulating branch flows from the
//! leaves down (backward) and propagating voltages and squared branch
//! currents from the root up (forward), iterating the fixed point until the
//! largest voltage change falls below tolerance. This solves the nonlinear
//! branch-flow equations exactly and serves as the physics oracle for the
//! relaxed and linearized subproblem models.
//!
//! All quantities are per-unit; voltages are squared magnitudes.

use crate::error::{Error, Result};
use crate::feeder::FeederTree;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Converged power-flow state. Vectors have length `n_buses`; `v[0]` is the
/// substation voltage, and line quantities are indexed by the downstream bus
/// (entry 0 unused).
#[derive(Debug, Clone)]
pub struct PfSolution {
    /// Squared voltage magnitude per bus.
    pub v: Vec<f64>,
    /// Squared current magnitude on the line feeding each bus.
    pub ell: Vec<f64>,
    /// Active power entering each line at its upstream end.
    pub p_flow: Vec<f64>,
    /// Reactive power entering each line at its upstream end.
    pub q_flow: Vec<f64>,
    /// Active power drawn from the transmission grid.
    pub p0: f64,
    /// Reactive power drawn from the transmission grid.
    pub q0: f64,
    /// Largest equation residual at the returned state.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve the power flow for net injections `p`, `q` (generation minus load,
/// per bus; entries for the root are ignored) with substation voltage `v0`.
///
/// Errors with [`Error::PfDiverged`] when `max_iter` sweeps do not reach
/// `tol`, and [`Error::VoltageCollapse`] if any squared voltage drops to or
/// below zero; the last iterate is never returned silently.
pub fn solve_radial_acpf(
    tree: &FeederTree,
    p: &[f64],
    q: &[f64],
    v0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PfSolution> {
    let n = tree.n_buses();
    if p.len() != n || q.len() != n {
        return Err(Error::BadConfig(format!(
            "injection vectors must have length {n}, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(Error::BadConfig(format!(
            "substation voltage must be positive, got {v0}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) || max_iter == 0 {
        return Err(Error::BadConfig(
            "power-flow tolerance and iteration limit must be positive".into(),
        ));
    }

    let mut v = vec![v0; n];
    let mut ell = vec![0.0; n];
    let mut p_flow = vec![0.0; n];
    let mut q_flow = vec![0.0; n];
    let mut last_delta = f64::INFINITY;

    for iteration in 1..=max_iter {
        // Backward: flows at the top of each line from everything below it.
        for b in (1..n).rev() {
            let mut pf = -p[b] + tree.r(b) * ell[b];
            let mut qf = -q[b] + tree.x(b) * ell[b];
            for &c in tree.children(b) {
                pf += p_flow[c];
                qf += q_flow[c];
            }
            p_flow[b] = pf;
            q_flow[b] = qf;
        }
        // Forward: voltages from the root down, currents from fresh parents.
        let mut delta: f64 = 0.0;
        for b in 1..n {
            let a = tree.parent(b);
            let (r, x) = (tree.r(b), tree.x(b));
            let v_new = v[a] - 2.0 * (r * p_flow[b] + x * q_flow[b]) + (r * r + x * x) * ell[b];
            if !(v_new.is_finite() && v_new > 0.0) {
                return Err(Error::VoltageCollapse {
                    bus: tree.label(b),
                    v: v_new,
                });
            }
            delta = delta.max((v_new - v[b]).abs());
            v[b] = v_new;
            ell[b] = (p_flow[b] * p_flow[b] + q_flow[b] * q_flow[b]) / v[a];
        }
        last_delta = delta;
        if delta < tol {
            let p0 = tree.children(0).iter().map(|&c| p_flow[c]).sum();
            let q0 = tree.children(0).iter().map(|&c| q_flow[c]).sum();
            let mut solution = PfSolution {
                v,
                ell,
                p_flow,
                q_flow,
                p0,
                q0,
                residual: 0.0,
                iterations: iteration,
            };
            solution.residual = pf_residual(tree, p, q, v0, &solution);
            return Ok(solution);
        }
    }
    Err(Error::PfDiverged {
        iterations: max_iter,
        last_delta,
    })
}

/// Largest absolute residual of the branch-flow equations at a state:
/// active/reactive balance per bus, the voltage-drop recursion, and the
/// current-flow-voltage identity `ell * v_parent = P^2 + Q^2`.
pub fn pf_residual(tree: &FeederTree, p: &[f64], q: &[f64], v0: f64, sol: &PfSolution) -> f64 {
    let mut worst: f64 = (sol.v[0] - v0).abs();
    for b in tree.non_root() {
        let a = tree.parent(b);
        let (r, x) = (tree.r(b), tree.x(b));
        let kids_p: f64 = tree.children(b).iter().map(|&c| sol.p_flow[c]).sum();
        let kids_q: f64 = tree.children(b).iter().map(|&c| sol.q_flow[c]).sum();
        worst = worst.max((kids_p - sol.p_flow[b] + r * sol.ell[b] - p[b]).abs());
        worst = worst.max((kids_q - sol.q_flow[b] + x * sol.ell[b] - q[b]).abs());
        worst = worst.max(
            (sol.v[b] - sol.v[a] + 2.0 * (r * sol.p_flow[b] + x * sol.q_flow[b])
                - (r * r + x * x) * sol.ell[b])
                .abs(),
        );
        worst = worst
            .max((sol.ell[b] * sol.v[a] - (sol.p_flow[b].powi(2) + sol.q_flow[b].powi(2))).abs());
    }
    worst
}

/// Mismatch of the substation balance `p0 = -1'p + r'ell` (total net
/// consumption plus line losses). Zero up to solver tolerance at any
/// converged state.
pub fn substation_energy_identity(tree: &FeederTree, p: &[f64], sol: &PfSolution) -> f64 {
    let net: f64 = tree.non_root().map(|b| p[b]).sum();
    let losses: f64 = tree.non_root().map(|b| tree.r(b) * sol.ell[b]).sum();
    (sol.p0 - (losses - net)).abs()
}
