//! A small second-order-cone programming layer.
//!
//! Problems are stated in a solver-agnostic form:
//!
//! ```text
//! minimize    c'z + z' diag(h) z          (h >= 0 entrywise)
//! subject to  A z = b                     (sparse equality rows)
//!             lb <= z <= ub               (per-variable boxes)
//!             ||body_k(z)|| <= head_k(z)  (second-order cones over
//!                                          affine expressions)
//! ```
//!
//! A cone with an empty body degenerates to the affine inequality
//! `head_k(z) >= 0`. The backing engine is the Clarabel interior-point
//! solver; this module owns the translation, maps its termination statuses
//! onto the four-value [`SolveStatus`], and never fabricates an `Optimal`.
//! [`max_violation`] re-checks any candidate point against the stated
//! constraints independently of the solve path.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{NonnegativeConeT, SecondOrderConeT, ZeroConeT},
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sparse affine expression `sum(coeff * z_var) + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        AffineExpr { terms, constant }
    }

    pub fn var(index: usize) -> Self {
        AffineExpr::new(vec![(index, 1.0)], 0.0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * z[i])
    }
}

/// One second-order cone `||body|| <= head`; empty body means `head >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocBlock {
    pub head: AffineExpr,
    pub body: Vec<AffineExpr>,
}

/// A linear equality row `sum(coeff * z_var) = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    n_vars: usize,
    pub c: Vec<f64>,
    /// Diagonal of the quadratic cost; must be non-negative for convexity.
    pub h: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub cones: Vec<SocBlock>,
}

impl ConicProblem {
    /// A problem over `n_vars` free variables with zero cost.
    pub fn new(n_vars: usize) -> Self {
        ConicProblem {
            n_vars,
            c: vec![0.0; n_vars],
            h: vec![0.0; n_vars],
            equalities: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n_vars],
            ub: vec![f64::INFINITY; n_vars],
            cones: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn bound(&mut self, var: usize, lb: f64, ub: f64) {
        self.lb[var] = lb;
        self.ub[var] = ub;
    }

    pub fn fix(&mut self, var: usize, value: f64) {
        self.bound(var, value, value);
    }

    pub fn add_equality(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearRow { terms, rhs });
    }

    pub fn add_cone(&mut self, head: AffineExpr, body: Vec<AffineExpr>) {
        self.cones.push(SocBlock { head, body });
    }

    /// Affine inequality `expr >= 0` (an empty-body cone).
    pub fn add_nonneg(&mut self, expr: AffineExpr) {
        self.add_cone(expr, Vec::new());
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars;
        let dims_ok =
            self.c.len() == n && self.h.len() == n && self.lb.len() == n && self.ub.len() == n;
        if !dims_ok {
            return Err(Error::BadProblem(
                "vector lengths disagree with n_vars".into(),
            ));
        }
        if let Some(i) = self.h.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::BadProblem(format!(
                "quadratic cost on variable {i} must be finite and non-negative, got {}",
                self.h[i]
            )));
        }
        if let Some(i) = self.c.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadProblem(format!(
                "linear cost on variable {i} is not finite"
            )));
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(Error::BadProblem(format!(
                    "variable {i} has lb {} above ub {}",
                    self.lb[i], self.ub[i]
                )));
            }
            if self.lb[i].is_nan() || self.ub[i].is_nan() {
                return Err(Error::BadProblem(format!("variable {i} has a NaN bound")));
            }
        }
        let check_terms = |terms: &[(usize, f64)], what: &str| -> Result<()> {
            for &(i, coeff) in terms {
                if i >= n {
                    return Err(Error::BadProblem(format!(
                        "{what} references variable {i}, but the problem has {n}"
                    )));
                }
                if !coeff.is_finite() {
                    return Err(Error::BadProblem(format!(
                        "{what} has a non-finite coefficient on variable {i}"
                    )));
                }
            }
            Ok(())
        };
        for (k, row) in self.equalities.iter().enumerate() {
            check_terms(&row.terms, &format!("equality {k}"))?;
            if !row.rhs.is_finite() {
                return Err(Error::BadProblem(format!(
                    "equality {k} has a non-finite rhs"
                )));
            }
        }
        for (k, cone) in self.cones.iter().enumerate() {
            check_terms(&cone.head.terms, &format!("cone {k} head"))?;
            for (j, expr) in cone.body.iter().enumerate() {
                check_terms(&expr.terms, &format!("cone {k} body {j}"))?;
            }
        }
        Ok(())
    }
}

/// Termination status. Only `Optimal` certifies the returned point; the
/// others carry whatever iterate the engine stopped at, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Ran out of iterations or stalled before certifying any of the above.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    /// `c'z + z' diag(h) z` at the returned point.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Absolute primal-dual objective gap.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Solve the problem. Statuses other than `Optimal` are reported in the
/// returned solution, not as errors; `Err` is reserved for malformed input.
pub fn solve(problem: &ConicProblem, options: SolveOptions) -> Result<ConicSolution> {
    problem.validate()?;
    if !(options.tol.is_finite() && options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::BadProblem(
            "solver tolerance and iteration limit must be positive".into(),
        ));
    }
    let n = problem.n_vars;

    // Objective: Clarabel minimizes (1/2) z'Pz + q'z, so P = 2 diag(h).
    let p_mat = csc_from_triplets(
        n,
        n,
        problem
            .h
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, i, 2.0 * v)),
    );

    // Constraints: rows of `A z + s = b` with s in a product cone, laid out
    // as equalities (zero cone), then finite bounds and affine inequalities
    // (non-negative cone), then the second-order cones.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut row = 0usize;

    for eq in &problem.equalities {
        for &(i, coeff) in &eq.terms {
            triplets.push((row, i, coeff));
        }
        b.push(eq.rhs);
        row += 1;
    }
    let n_eq = row;

    let mut n_ineq = 0usize;
    for i in 0..n {
        if problem.ub[i].is_finite() {
            triplets.push((row, i, 1.0));
            b.push(problem.ub[i]);
            row += 1;
            n_ineq += 1;
        }
        if problem.lb[i].is_finite() {
            triplets.push((row, i, -1.0));
            b.push(-problem.lb[i]);
            row += 1;
            n_ineq += 1;
        }
    }
    let mut soc_dims: Vec<usize> = Vec::new();
    for cone in &problem.cones {
        if cone.body.is_empty() {
            // head(z) >= 0  <=>  -head_terms z + s = head_const, s >= 0
            for &(i, coeff) in &cone.head.terms {
                triplets.push((row, i, -coeff));
            }
            b.push(cone.head.constant);
            row += 1;
            n_ineq += 1;
        }
    }
    for cone in &problem.cones {
        if cone.body.is_empty() {
            continue;
        }
        for &(i, coeff) in &cone.head.terms {
            triplets.push((row, i, -coeff));
        }
        b.push(cone.head.constant);
        row += 1;
        for expr in &cone.body {
            for &(i, coeff) in &expr.terms {
                triplets.push((row, i, -coeff));
            }
            b.push(expr.constant);
            row += 1;
        }
        soc_dims.push(1 + cone.body.len());
    }

    let a_mat = csc_from_triplets(row, n, triplets.into_iter());
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if n_ineq > 0 {
        cones.push(NonnegativeConeT(n_ineq));
    }
    cones.extend(soc_dims.into_iter().map(SecondOrderConeT));

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(options.max_iter)
        .tol_gap_abs(options.tol)
        .tol_gap_rel(options.tol)
        .tol_feas(options.tol)
        .build()
        .map_err(|e| Error::BadProblem(format!("solver settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p_mat, &problem.c, &a_mat, &b, &cones, settings)
        .map_err(|e| Error::BadProblem(format!("solver rejected the problem: {e:?}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::MaxIter,
    };
    let z = solver.solution.x.clone();
    Ok(ConicSolution {
        status,
        objective: objective_value(problem, &z),
        z,
        primal_residual: solver.solution.r_prim,
        dual_residual: solver.solution.r_dual,
        gap: (solver.solution.obj_val - solver.solution.obj_val_dual).abs(),
        iterations: solver.solution.iterations as usize,
    })
}

/// `c'z + z' diag(h) z`.
pub fn objective_value(problem: &ConicProblem, z: &[f64]) -> f64 {
    z.iter()
        .zip(problem.c.iter().zip(&problem.h))
        .map(|(&zi, (&ci, &hi))| ci * zi + hi * zi * zi)
        .sum()
}

/// Largest violation of any stated constraint at `z`: equality mismatch,
/// bound excess, or `||body|| - head` where positive. Independent of the
/// solver, so it can audit any candidate point.
pub fn max_violation(problem: &ConicProblem, z: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for eq in &problem.equalities {
        let lhs: f64 = eq.terms.iter().map(|&(i, c)| c * z[i]).sum();
        worst = worst.max((lhs - eq.rhs).abs());
    }
    for ((&zi, &lb), &ub) in z.iter().zip(&problem.lb).zip(&problem.ub) {
        worst = worst.max(lb - zi);
        worst = worst.max(zi - ub);
    }
    for cone in &problem.cones {
        let head = cone.head.eval(z);
        if cone.body.is_empty() {
            worst = worst.max(-head);
        } else {
            let norm = cone
                .body
                .iter()
                .map(|e| e.eval(z).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(norm - head);
        }
    }
    worst
}

/// Render the problem in a stable line-oriented text form, for dumping
/// failing subproblems to disk:
///
/// ```text
/// conic problem: <n> vars, <m> equalities, <k> cones
/// c <values...>
/// h <values...>
/// bound <var> <lb> <ub>          (finite bounds only)
/// eq <coeff>*z<var> ... = <rhs>
/// cone ||<expr>; <expr>|| <= <expr>
/// nonneg <expr> >= 0
/// ```
pub fn dump(problem: &ConicProblem) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "conic problem: {} vars, {} equalities, {} cones",
        problem.n_vars,
        problem.equalities.len(),
        problem.cones.len()
    );
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "c {}", join(&problem.c));
    let _ = writeln!(out, "h {}", join(&problem.h));
    for i in 0..problem.n_vars {
        if problem.lb[i].is_finite() || problem.ub[i].is_finite() {
            let _ = writeln!(out, "bound {} {} {}", i, problem.lb[i], problem.ub[i]);
        }
    }
    let expr_str = |terms: &[(usize, f64)], constant: f64| {
        let mut s = terms
            .iter()
            .map(|(i, c)| format!("{c:+}*z{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        if constant != 0.0 || terms.is_empty() {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&format!("{constant:+}"));
        }
        s
    };
    for eq in &problem.equalities {
        let _ = writeln!(out, "eq {} = {}", expr_str(&eq.terms, 0.0), eq.rhs);
    }
    for cone in &problem.cones {
        let head = expr_str(&cone.head.terms, cone.head.constant);
        if cone.body.is_empty() {
            let _ = writeln!(out, "nonneg {head} >= 0");
        } else {
            let body = cone
                .body
                .iter()
                .map(|e| expr_str(&e.terms, e.constant))
                .collect::<Vec<_>>()
                .join("; ");
            let _ = writeln!(out, "cone ||{body}|| <= {head}");
        }
    }
    out
}

/// Build a compressed-sparse-column matrix from (row, col, value) triplets,
/// summing duplicates.
fn csc_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: impl Iterator<Item = (usize, usize, f64)>,
) -> CscMatrix<f64> {
    let mut entries: Vec<(usize, usize, f64)> = triplets.filter(|&(_, _, v)| v != 0.0).collect();
    entries.sort_by_key(|&(r, c, _)| (c, r));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for (r, c, v) in entries {
        match merged.last_mut() {
            Some((lr, lc, lv)) if *lr == r && *lc == c => *lv += v,
            _ => merged.push((r, c, v)),
        }
    }
    let mut colptr = vec![0usize; ncols + 1];
    for &(_, c, _) in &merged {
        colptr[c + 1] += 1;
    }
    for c in 0..ncols {
        colptr[c + 1] += colptr[c];
    }
    let rowval: Vec<usize> = merged.iter().map(|&(r, _, _)| r).collect();
    let nzval: Vec<f64> = merged.iter().map(|&(_, _, v)| v).collect();
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Scaling the linear cost of an LP leaves the argmin unchanged.
        #[test]
        fn cost_scaling_invariance(
            c0 in -2.0f64..2.0,
            c1 in -2.0f64..2.0,
            scale in 0.1f64..50.0,
        ) {
            prop_assume!(c0.abs() > 1e-3 && c1.abs() > 1e-3);
            let build = |k: f64| {
                let mut p = ConicProblem::new(2);
                p.c = vec![k * c0, k * c1];
                p.bound(0, 0.0, 1.0);
                p.bound(1, 0.0, 1.0);
                p.add_nonneg(AffineExpr::new(vec![(0, 1.0), (1, 1.0)], -0.25));
                p
            };
            let a = solve(&build(1.0), SolveOptions::default()).unwrap();
            let b = solve(&build(scale), SolveOptions::default()).unwrap();
            prop_assert_eq!(a.status, SolveStatus::Optimal);
            prop_assert_eq!(b.status, SolveStatus::Optimal);
            prop_assert!((a.z[0] - b.z[0]).abs() < 1e-5);
            prop_assert!((a.z[1] - b.z[1]).abs() < 1e-5);
        }

        /// Optimal points satisfy the stated constraints to well within 10x
        /// the solve tolerance.
        #[test]
        fn solutions_respect_constraints(
            c0 in -1.0f64..1.0,
            c1 in -1.0f64..1.0,
            radius in 0.2f64..2.0,
        ) {
            let mut p = ConicProblem::new(2);
            p.c = vec![c0, c1];
            p.add_cone(
                AffineExpr::new(vec![], radius),
                vec![AffineExpr::var(0), AffineExpr::var(1)],
            );
            let sol = solve(&p, SolveOptions::default()).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            prop_assert!(max_violation(&p, &sol.z) < 1e-7);
        }
    }
}
