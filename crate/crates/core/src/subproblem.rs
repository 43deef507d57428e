//! Per-slot conic subproblems for the two grid models.
//!
//! Each control slot solves one convex program in the inverter injections
//! `(p_g, q_g)`: minimize the instantaneous economic cost (main-grid energy
//! plus feed-in-tariff payouts) augmented with the dual prices attached to
//! the on-average apparent-power and voltage limits, subject to the
//! instantaneous (wide) limits and a network model:
//!
//! * [`GridModel::Bfm`]: the branch-flow equations with the nonconvex
//!   current identity `ell = (P^2 + Q^2) / v` relaxed to a second-order cone
//!   per line. The relaxation is empirically exact here (the cone binds);
//!   [`SubproblemSolution::exactness_gap`] reports the worst relative slack.
//! * [`GridModel::Ldf`]: the linearized (lossless) flow equations, with line
//!   losses re-introduced in the objective as a quadratic in the flows.
//!
//! Buses with a renewable surplus (`pg_max >= p_c`) keep their curtailment
//! decision and carry an epigraph variable `t >= [p_g - p_c]_+` that prices
//! the surplus; all other buses are forced to `p_g = pg_max`.

use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ConicProblem, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::feeder::FeederTree;
use crate::scenario::SlotData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridModel {
    /// Second-order-cone relaxation of the exact branch-flow equations.
    Bfm,
    /// Linearized flow equations with quadratic loss costing.
    Ldf,
}

impl GridModel {
    pub fn as_str(self) -> &'static str {
        match self {
            GridModel::Bfm => "bfm",
            GridModel::Ldf => "ldf",
        }
    }
}

/// Operating limits. `v_l..v_u` is the tight band enforced on time averages;
/// `v_l_wide..v_u_wide` bounds every individual slot. Inverters may run up to
/// `overload_factor` times their nameplate rating instantaneously, while the
/// nameplate itself caps the average apparent power. All voltages are squared
/// magnitudes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsProfile {
    pub v_l: f64,
    pub v_u: f64,
    pub v_l_wide: f64,
    pub v_u_wide: f64,
    pub overload_factor: f64,
}

impl Default for LimitsProfile {
    /// A +/-2% regulation band, +/-3% short-term band, and 30% inverter
    /// overload headroom.
    fn default() -> Self {
        LimitsProfile {
            v_l: 0.9604,
            v_u: 1.0404,
            v_l_wide: 0.9409,
            v_u_wide: 1.0609,
            overload_factor: 1.3,
        }
    }
}

impl LimitsProfile {
    /// The deterministic variant: the tight band and nameplate rating are
    /// enforced on every slot (no averaging headroom).
    pub fn tight(&self) -> LimitsProfile {
        LimitsProfile {
            v_l: self.v_l,
            v_u: self.v_u,
            v_l_wide: self.v_l,
            v_u_wide: self.v_u,
            overload_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.v_l_wide <= self.v_l
            && self.v_l < self.v_u
            && self.v_u <= self.v_u_wide
            && self.v_l_wide > 0.0;
        if !ordered {
            return Err(Error::BadConfig(format!(
                "voltage limits must satisfy 0 < v_l_wide <= v_l < v_u <= v_u_wide, got [{}, {}] in [{}, {}]",
                self.v_l, self.v_u, self.v_l_wide, self.v_u_wide
            )));
        }
        if !(self.overload_factor.is_finite() && self.overload_factor >= 1.0) {
            return Err(Error::BadConfig(format!(
                "overload_factor must be >= 1, got {}",
                self.overload_factor
            )));
        }
        Ok(())
    }
}

/// Multipliers for the dualized average constraints, one per bus (entry 0
/// unused). All entries stay non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// Prices on the average apparent-power caps.
    pub nu: Vec<f64>,
    /// Prices on the lower average-voltage bounds.
    pub xi_lower: Vec<f64>,
    /// Prices on the upper average-voltage bounds.
    pub xi_upper: Vec<f64>,
}

impl DualState {
    pub fn zeros(n_buses: usize) -> Self {
        DualState {
            nu: vec![0.0; n_buses],
            xi_lower: vec![0.0; n_buses],
            xi_upper: vec![0.0; n_buses],
        }
    }

    pub fn n_buses(&self) -> usize {
        self.nu.len()
    }

    /// Euclidean norm over all multipliers.
    pub fn norm(&self) -> f64 {
        self.nu
            .iter()
            .chain(&self.xi_lower)
            .chain(&self.xi_upper)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nu
            .iter()
            .chain(&self.xi_lower)
            .chain(&self.xi_upper)
            .all(|&v| v >= 0.0)
    }
}

/// Commanded inverter injections, per bus (entry 0 unused).
#[derive(Debug, Clone)]
pub struct Setpoints {
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
}

/// Smallest squared line current (p.u.) considered when certifying cone
/// exactness. Below this a line moves ~300 kVA or less and the interior-point
/// complementarity residue dominates the relative slack, so the ratio stops
/// measuring anything about the relaxation.
pub const ELL_GAP_FLOOR: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub setpoints: Setpoints,
    /// Active power entering each line (indexed by downstream bus).
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Model squared voltages; entry 0 is the substation setpoint.
    pub v_model: Vec<f64>,
    /// Squared line currents (branch-flow model only).
    pub ell: Option<Vec<f64>>,
    /// Epigraph values `t >= [p_g - p_c]_+`; zero on non-surplus buses.
    pub surplus_aux: Vec<f64>,
    /// The surplus partition used for this slot.
    pub surplus: Vec<bool>,
    /// Model substation draw; for the linearized model this includes the
    /// quadratic loss correction priced by the objective.
    pub p0_model: f64,
    /// Value of the dualized per-slot objective (the dual function sample),
    /// including the price and multiplier constants.
    pub g_value: f64,
    /// `pi0 * p0 + pif * sum(t)`: the economic cost without dual terms, in
    /// (cents/kWh) x p.u.; the metrics layer converts to dollars.
    pub instantaneous_cost: f64,
    /// Worst slack of the current-identity cones (branch-flow model only):
    /// `max(0, 1 - (P^2 + Q^2) / (v_up * ell))` over lines whose squared
    /// current exceeds [`ELL_GAP_FLOOR`]. Zero up to solver tolerance exactly
    /// when the relaxation solved the original nonconvex equations; idle lines
    /// are skipped because relative slack on a vanishing current says nothing
    /// about exactness.
    pub exactness_gap: Option<f64>,
    pub iterations: usize,
}

/// The surplus partition: buses whose available generation covers their
/// demand (`pg_max >= p_c`, ties included) keep a curtailment decision; the
/// rest are forced to inject everything available.
pub fn surplus_partition(tree: &FeederTree, slot: &SlotData) -> Vec<bool> {
    let mut surplus = vec![false; tree.n_buses()];
    for n in tree.non_root() {
        surplus[n] = slot.pg_max[n] >= slot.p_c[n];
    }
    surplus
}

/// Column layout shared by both builders: blocks of one variable per
/// non-root bus in canonical order, then one epigraph column per surplus bus.
struct VarMap {
    n_lines: usize,
    has_ell: bool,
    /// Epigraph column for each bus, `usize::MAX` when not in the surplus set.
    t_col: Vec<usize>,
    n_vars: usize,
}

impl VarMap {
    fn new(tree: &FeederTree, surplus: &[bool], has_ell: bool) -> Self {
        let n_lines = tree.n_lines();
        let blocks = if has_ell { 6 } else { 5 };
        let mut t_col = vec![usize::MAX; tree.n_buses()];
        let mut next = blocks * n_lines;
        for n in tree.non_root() {
            if surplus[n] {
                t_col[n] = next;
                next += 1;
            }
        }
        VarMap {
            n_lines,
            has_ell,
            t_col,
            n_vars: next,
        }
    }

    fn pg(&self, bus: usize) -> usize {
        bus - 1
    }
    fn qg(&self, bus: usize) -> usize {
        self.n_lines + bus - 1
    }
    fn p(&self, bus: usize) -> usize {
        2 * self.n_lines + bus - 1
    }
    fn q(&self, bus: usize) -> usize {
        3 * self.n_lines + bus - 1
    }
    fn v(&self, bus: usize) -> usize {
        4 * self.n_lines + bus - 1
    }
    fn ell(&self, bus: usize) -> usize {
        debug_assert!(self.has_ell);
        5 * self.n_lines + bus - 1
    }
    fn t(&self, bus: usize) -> Option<usize> {
        (self.t_col[bus] != usize::MAX).then(|| self.t_col[bus])
    }
}

fn check_slot(tree: &FeederTree, slot: &SlotData) -> Result<()> {
    let n = tree.n_buses();
    if slot.p_c.len() != n || slot.q_c.len() != n || slot.pg_max.len() != n {
        return Err(Error::BadScenario(format!(
            "slot {} vectors must have length {n}",
            slot.t
        )));
    }
    for b in tree.non_root() {
        if slot.pg_max[b] > 0.0 && !tree.bus(b).has_inverter() {
            return Err(Error::BadScenario(format!(
                "slot {}: bus {} has available generation but no inverter rating",
                slot.t,
                tree.label(b)
            )));
        }
    }
    Ok(())
}

fn check_dual(tree: &FeederTree, dual: &DualState) -> Result<()> {
    if dual.n_buses() != tree.n_buses()
        || dual.xi_lower.len() != tree.n_buses()
        || dual.xi_upper.len() != tree.n_buses()
    {
        return Err(Error::BadConfig(
            "dual state length disagrees with the feeder".into(),
        ));
    }
    if !dual.is_nonnegative() {
        return Err(Error::BadConfig(
            "dual multipliers must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Shared scaffolding: bounds, inverter and epigraph cones, and the
/// injection-dependent objective terms.
fn build_common(
    tree: &FeederTree,
    slot: &SlotData,
    dual: &DualState,
    limits: &LimitsProfile,
    pi0: f64,
    pif: f64,
    vars: &VarMap,
) -> ConicProblem {
    let mut problem = ConicProblem::new(vars.n_vars);
    for b in tree.non_root() {
        let bus = tree.bus(b);
        // Curtailment decision only on surplus buses; everything available
        // must be injected elsewhere.
        if let Some(t) = vars.t(b) {
            problem.bound(vars.pg(b), 0.0, slot.pg_max[b]);
            problem.bound(t, 0.0, f64::INFINITY);
            problem.add_nonneg(AffineExpr::new(
                vec![(t, 1.0), (vars.pg(b), -1.0)],
                slot.p_c[b],
            ));
            problem.c[t] += pif;
        } else {
            problem.fix(vars.pg(b), slot.pg_max[b]);
        }
        if bus.has_inverter() {
            let cap = limits.overload_factor * bus.s_pu;
            problem.add_cone(
                AffineExpr::new(vec![], cap),
                vec![AffineExpr::var(vars.pg(b)), AffineExpr::var(vars.qg(b))],
            );
        } else {
            problem.fix(vars.qg(b), 0.0);
        }
        problem.bound(vars.v(b), limits.v_l_wide, limits.v_u_wide);

        problem.c[vars.pg(b)] += -pi0;
        problem.c[vars.v(b)] += dual.xi_upper[b] - dual.xi_lower[b];
        problem.h[vars.pg(b)] += dual.nu[b];
        problem.h[vars.qg(b)] += dual.nu[b];
    }
    problem
}

/// Branch-flow subproblem: exact flow equalities with per-line relaxation
/// cones `||(2P, 2Q, v_up - ell)|| <= v_up + ell`, losses priced through the
/// `ell` variables.
pub fn build_bfm(
    tree: &FeederTree,
    slot: &SlotData,
    dual: &DualState,
    limits: &LimitsProfile,
    pi0: f64,
    pif: f64,
    v0: f64,
) -> ConicProblem {
    let surplus = surplus_partition(tree, slot);
    let vars = VarMap::new(tree, &surplus, true);
    let mut problem = build_common(tree, slot, dual, limits, pi0, pif, &vars);
    for b in tree.non_root() {
        let (r, x) = (tree.r(b), tree.x(b));
        problem.bound(vars.ell(b), 0.0, f64::INFINITY);
        problem.c[vars.ell(b)] += pi0 * r;

        let mut p_terms = vec![(vars.p(b), -1.0), (vars.ell(b), r), (vars.pg(b), -1.0)];
        let mut q_terms = vec![(vars.q(b), -1.0), (vars.ell(b), x), (vars.qg(b), -1.0)];
        for &c in tree.children(b) {
            p_terms.push((vars.p(c), 1.0));
            q_terms.push((vars.q(c), 1.0));
        }
        problem.add_equality(p_terms, -slot.p_c[b]);
        problem.add_equality(q_terms, tree.bus(b).shunt_pu - slot.q_c[b]);

        let a = tree.parent(b);
        let mut v_terms = vec![
            (vars.v(b), 1.0),
            (vars.p(b), 2.0 * r),
            (vars.q(b), 2.0 * x),
            (vars.ell(b), -(r * r + x * x)),
        ];
        let mut rhs = 0.0;
        if a == 0 {
            rhs = v0;
        } else {
            v_terms.push((vars.v(a), -1.0));
        }
        problem.add_equality(v_terms, rhs);

        // ell * v_up >= P^2 + Q^2 as a rotated cone written in standard form.
        let (head, tail) = if a == 0 {
            (
                AffineExpr::new(vec![(vars.ell(b), 1.0)], v0),
                AffineExpr::new(vec![(vars.ell(b), -1.0)], v0),
            )
        } else {
            (
                AffineExpr::new(vec![(vars.v(a), 1.0), (vars.ell(b), 1.0)], 0.0),
                AffineExpr::new(vec![(vars.v(a), 1.0), (vars.ell(b), -1.0)], 0.0),
            )
        };
        problem.add_cone(
            head,
            vec![
                AffineExpr::new(vec![(vars.p(b), 2.0)], 0.0),
                AffineExpr::new(vec![(vars.q(b), 2.0)], 0.0),
                tail,
            ],
        );
    }
    problem
}

/// Linearized subproblem: lossless flow equalities; losses approximated in
/// the objective by `pi0 * sum(r * (P^2 + Q^2))`.
pub fn build_ldf(
    tree: &FeederTree,
    slot: &SlotData,
    dual: &DualState,
    limits: &LimitsProfile,
    pi0: f64,
    pif: f64,
    v0: f64,
) -> ConicProblem {
    let surplus = surplus_partition(tree, slot);
    let vars = VarMap::new(tree, &surplus, false);
    let mut problem = build_common(tree, slot, dual, limits, pi0, pif, &vars);
    for b in tree.non_root() {
        let (r, x) = (tree.r(b), tree.x(b));
        problem.h[vars.p(b)] += pi0 * r;
        problem.h[vars.q(b)] += pi0 * r;

        let mut p_terms = vec![(vars.p(b), -1.0), (vars.pg(b), -1.0)];
        let mut q_terms = vec![(vars.q(b), -1.0), (vars.qg(b), -1.0)];
        for &c in tree.children(b) {
            p_terms.push((vars.p(c), 1.0));
            q_terms.push((vars.q(c), 1.0));
        }
        problem.add_equality(p_terms, -slot.p_c[b]);
        problem.add_equality(q_terms, tree.bus(b).shunt_pu - slot.q_c[b]);

        let a = tree.parent(b);
        let mut v_terms = vec![(vars.v(b), 1.0), (vars.p(b), 2.0 * r), (vars.q(b), 2.0 * x)];
        let mut rhs = 0.0;
        if a == 0 {
            rhs = v0;
        } else {
            v_terms.push((vars.v(a), -1.0));
        }
        problem.add_equality(v_terms, rhs);
    }
    problem
}

/// Build, solve, and unpack one slot. Any status other than `Optimal` is an
/// error carrying the slot index; nothing is fabricated from failed solves.
pub fn solve_slot(
    tree: &FeederTree,
    slot: &SlotData,
    dual: &DualState,
    limits: &LimitsProfile,
    model: GridModel,
    v0: f64,
    options: SolveOptions,
) -> Result<SubproblemSolution> {
    check_slot(tree, slot)?;
    check_dual(tree, dual)?;
    limits.validate()?;
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(Error::BadConfig(format!(
            "substation voltage must be positive, got {v0}"
        )));
    }
    let (pi0, pif) = (slot.price_main, slot.price_fit);
    let problem = match model {
        GridModel::Bfm => build_bfm(tree, slot, dual, limits, pi0, pif, v0),
        GridModel::Ldf => build_ldf(tree, slot, dual, limits, pi0, pif, v0),
    };
    let solved = conic::solve(&problem, options)?;
    if solved.status != SolveStatus::Optimal {
        return Err(Error::SlotSolve {
            t: slot.t,
            status: solved.status,
        });
    }

    let surplus = surplus_partition(tree, slot);
    let vars = VarMap::new(tree, &surplus, matches!(model, GridModel::Bfm));
    let z = &solved.z;
    let n = tree.n_buses();
    let mut setpoints = Setpoints {
        p_g: vec![0.0; n],
        q_g: vec![0.0; n],
    };
    let mut p_flow = vec![0.0; n];
    let mut q_flow = vec![0.0; n];
    let mut v_model = vec![v0; n];
    let mut surplus_aux = vec![0.0; n];
    let mut ell = vars.has_ell.then(|| vec![0.0; n]);
    for b in tree.non_root() {
        setpoints.p_g[b] = z[vars.pg(b)];
        setpoints.q_g[b] = z[vars.qg(b)];
        p_flow[b] = z[vars.p(b)];
        q_flow[b] = z[vars.q(b)];
        v_model[b] = z[vars.v(b)];
        if let Some(t) = vars.t(b) {
            surplus_aux[b] = z[t];
        }
        if let Some(ell) = ell.as_mut() {
            ell[b] = z[vars.ell(b)];
        }
    }

    let mut p0_model: f64 = tree.children(0).iter().map(|&c| p_flow[c]).sum();
    if matches!(model, GridModel::Ldf) {
        let approx_losses: f64 = tree
            .non_root()
            .map(|b| tree.r(b) * (p_flow[b] * p_flow[b] + q_flow[b] * q_flow[b]))
            .sum();
        p0_model += approx_losses;
    }

    let exactness_gap = ell.as_ref().map(|ell| {
        let mut gap: f64 = 0.0;
        for b in tree.non_root() {
            if ell[b] < ELL_GAP_FLOOR {
                continue;
            }
            let v_up = v_model[tree.parent(b)];
            let sq = p_flow[b] * p_flow[b] + q_flow[b] * q_flow[b];
            gap = gap.max(1.0 - sq / (v_up * ell[b]));
        }
        gap.max(0.0)
    });

    let t_total: f64 = surplus_aux.iter().sum();
    let instantaneous_cost = pi0 * p0_model + pif * t_total;
    let demand_total: f64 = tree.non_root().map(|b| slot.p_c[b]).sum();
    let dual_constants: f64 = tree
        .non_root()
        .map(|b| {
            let s = tree.bus(b).s_pu;
            -dual.nu[b] * s * s + dual.xi_lower[b] * limits.v_l - dual.xi_upper[b] * limits.v_u
        })
        .sum();
    let g_value = solved.objective + pi0 * demand_total + dual_constants;

    Ok(SubproblemSolution {
        setpoints,
        p_flow,
        q_flow,
        v_model,
        ell,
        surplus_aux,
        surplus,
        p0_model,
        g_value,
        instantaneous_cost,
        exactness_gap,
        iterations: solved.iterations,
    })
}
