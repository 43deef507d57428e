//! Acceptance gate: the ten headline behaviors of the stack, each asserted
//! at its stated tolerance and reported as a single `criterion N PASS` line
//! (run with `--nocapture` to see the measured numbers).
//!
//! Shared fixtures are built once: a 120-slot stationary scenario solved by
//! both controllers at 1e-9, and a 2000-slot dawn-to-dusk run at the
//! real-data step size. All randomness is seeded; reruns are bit-identical.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridem::acpf::{pf_residual, solve_radial_acpf, substation_energy_identity};
use gridem::conic::{self, AffineExpr, ConicProblem, SolveOptions, SolveStatus};
use gridem::controller::{dual_update, run_horizon, ControllerConfig, Mode, Trajectory};
use gridem::feeder::{builtin_sce56_with, parse_feeder, sce56_bus3_override, FeederTree};
use gridem::metrics;
use gridem::runner::{run_jobs, Job};
use gridem::scenario::{gen_diurnal, gen_synthetic, DiurnalConfig, SyntheticConfig};
use gridem::subproblem::{DualState, GridModel, LimitsProfile, Setpoints};

fn tree() -> &'static FeederTree {
    static TREE: OnceLock<FeederTree> = OnceLock::new();
    TREE.get_or_init(|| builtin_sce56_with(&[sce56_bus3_override()]).unwrap())
}

/// 120 stationary slots, both controllers on the exact cone model, with the
/// wall time of the two runs.
struct StationaryFixture {
    eem: Trajectory,
    dem: Trajectory,
    elapsed: Duration,
}

fn stationary() -> &'static StationaryFixture {
    static FIX: OnceLock<StationaryFixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let tree = tree();
        let slots = gen_synthetic(tree, &SyntheticConfig::default()).unwrap();
        let solve = SolveOptions {
            tol: 1e-9,
            max_iter: 200,
        };
        let started = Instant::now();
        let eem = run_horizon(
            tree,
            &slots,
            &ControllerConfig {
                solve,
                ..ControllerConfig::default()
            },
        )
        .unwrap();
        let dem = run_horizon(
            tree,
            &slots,
            &ControllerConfig {
                mode: Mode::Dem,
                solve,
                ..ControllerConfig::default()
            },
        )
        .unwrap();
        StationaryFixture {
            eem,
            dem,
            elapsed: started.elapsed(),
        }
    })
}

/// 2000 slots from 05:00 through the solar day at the real-data step size.
fn long_horizon() -> &'static Trajectory {
    static FIX: OnceLock<Trajectory> = OnceLock::new();
    FIX.get_or_init(|| {
        let tree = tree();
        let cfg = DiurnalConfig {
            n_slots: 2000,
            start_hour: 5.0,
            ..DiurnalConfig::default()
        };
        let slots = gen_diurnal(tree, &cfg).unwrap();
        run_horizon(
            tree,
            &slots,
            &ControllerConfig {
                mu: 0.25,
                solve: SolveOptions {
                    tol: 1e-8,
                    max_iter: 200,
                },
                ..ControllerConfig::default()
            },
        )
        .unwrap()
    })
}

fn final_hourly_cost(traj: &Trajectory) -> f64 {
    *metrics::time_avg_cost_usd_per_h(&traj.records, tree(), traj.config.dt_s)
        .last()
        .unwrap()
}

#[test]
fn criterion_1_cone_relaxation_is_exact_on_the_stationary_scenario() {
    let fix = stationary();
    let mut max_gap = 0.0f64;
    let mut n = 0;
    for rec in fix.eem.records.iter().chain(&fix.dem.records) {
        max_gap = max_gap.max(rec.exactness_gap.expect("cone slots certify exactness"));
        n += 1;
    }
    assert_eq!(n, 240);
    assert!(max_gap <= 1e-5, "worst exactness gap {max_gap:.3e}");
    assert!(fix.elapsed < Duration::from_secs(120), "{:?}", fix.elapsed);
    println!(
        "criterion 1 PASS: {n} cone subproblems, worst exactness gap {max_gap:.3e} <= 1e-5, solved in {:.2?}"
        , fix.elapsed
    );
}

#[test]
fn criterion_2_averaging_the_limits_lowers_cost_under_common_randomness() {
    let fix = stationary();
    let eem = final_hourly_cost(&fix.eem);
    let dem = final_hourly_cost(&fix.dem);
    let dual_norm = fix.eem.final_dual.norm();
    assert!(dual_norm > 0.0, "an average constraint should bind");
    assert!(eem <= dem, "eem {eem} vs dem {dem}");
    let improvement = (dem - eem) / dem;
    assert!(improvement >= 0.005, "improvement {improvement:.4}");
    println!(
        "criterion 2 PASS: final time-average cost {eem:.2} $/h (averaged limits) vs {dem:.2} $/h \
         (per-slot limits), {:.1}% lower with binding multipliers (norm {dual_norm:.3})",
        improvement * 100.0
    );
}

#[test]
fn criterion_3_long_run_averages_converge_while_slots_may_excurse() {
    let tree = tree();
    let traj = long_horizon();
    let res = metrics::ergodic_feasibility(tree, &traj.records, &traj.config.limits).unwrap();
    let (worst_s, worst_v) = res.final_worst();
    assert!(worst_s <= 1e-3, "apparent-power residual {worst_s:.3e}");
    assert!(worst_v <= 1e-3, "voltage residual {worst_v:.3e}");
    let limits = &traj.config.limits;
    let mut above = 0usize;
    let mut below = 0usize;
    for rec in &traj.records {
        if tree.non_root().any(|b| rec.v_model[b] > limits.v_u + 1e-12) {
            above += 1;
        }
        if tree.non_root().any(|b| rec.v_model[b] < limits.v_l - 1e-12) {
            below += 1;
        }
    }
    assert!(
        above > 0 && below > 0,
        "expected transient excursions on both sides, saw {above} above / {below} below"
    );
    println!(
        "criterion 3 PASS: after {} slots worst running-average residuals {worst_s:.3e} (apparent) / \
         {worst_v:.3e} (voltage) <= 1e-3, with {above}/{below} slots transiently above/below the tight band",
        traj.records.len()
    );
}

#[test]
fn criterion_4_larger_steps_do_not_lower_the_mean_cost() {
    let tree = tree();
    let mus = [0.1, 0.2, 0.3];
    let n_reps = 20usize;
    let solve = SolveOptions {
        tol: 1e-9,
        max_iter: 200,
    };
    // Common random numbers: replica r sees the same scenario at every step
    // size, so the comparison is paired.
    let mut jobs = Vec::new();
    for (k, &mu) in mus.iter().enumerate() {
        for rep in 0..n_reps {
            let slots = gen_synthetic(
                tree,
                &SyntheticConfig {
                    n_slots: 60,
                    seed: 1000 + rep as u64,
                    ..SyntheticConfig::default()
                },
            )
            .unwrap();
            jobs.push(Job::new(
                format!("mu{k}-rep{rep}"),
                ControllerConfig {
                    mu,
                    solve,
                    ..ControllerConfig::default()
                },
                slots,
            ));
        }
    }
    let results = run_jobs(tree, &jobs);
    let mut costs = vec![vec![0.0f64; n_reps]; mus.len()];
    for (j, result) in results.into_iter().enumerate() {
        costs[j / n_reps][j % n_reps] = final_hourly_cost(&result.unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for k in 1..mus.len() {
        let diffs: Vec<f64> = (0..n_reps).map(|r| costs[k][r] - costs[k - 1][r]).collect();
        let m = mean(&diffs);
        let var = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n_reps - 1) as f64;
        let se = (var / n_reps as f64).sqrt();
        assert!(
            m >= -se - 1e-12,
            "mu {} -> {}: mean paired cost change {m:.4e} below -1 SE ({se:.4e})",
            mus[k - 1],
            mus[k]
        );
    }
    println!(
        "criterion 4 PASS: mean final cost {:.4} / {:.4} / {:.4} $/h across mu 0.1 / 0.2 / 0.3 \
         (20 paired replicas, non-decreasing within 1 SE)",
        mean(&costs[0]),
        mean(&costs[1]),
        mean(&costs[2])
    );
}

#[test]
fn criterion_5_every_slot_respects_the_wide_limits() {
    let tree = tree();
    let limits = LimitsProfile::default();
    let mut worst = f64::NEG_INFINITY;
    let mut n = 0;
    for traj in [&stationary().eem, long_horizon()] {
        for rec in &traj.records {
            n += 1;
            for b in tree.non_root() {
                worst = worst.max(limits.v_l_wide - rec.v_model[b]);
                worst = worst.max(rec.v_model[b] - limits.v_u_wide);
                let s_bar = limits.overload_factor * tree.bus(b).s_pu;
                let apparent = (rec.p_g[b] * rec.p_g[b] + rec.q_g[b] * rec.q_g[b]).sqrt();
                worst = worst.max(apparent - s_bar);
            }
        }
    }
    assert!(
        worst <= 1e-6,
        "worst instantaneous-limit violation {worst:.3e}"
    );
    println!(
        "criterion 5 PASS: {n} controlled slots, worst violation of the wide voltage box or \
         inverter overload cap {worst:.3e} <= 1e-6"
    );
}

#[test]
fn criterion_6_per_slot_enforcement_keeps_realized_voltages_tight() {
    let tree = tree();
    let limits = LimitsProfile::default();
    let mut worst = f64::NEG_INFINITY;
    for rec in &stationary().dem.records {
        for b in tree.non_root() {
            worst = worst.max(limits.v_l - rec.v_ac[b]);
            worst = worst.max(rec.v_ac[b] - limits.v_u);
        }
    }
    assert!(worst <= 1e-6, "worst tight-band violation {worst:.3e}");
    println!(
        "criterion 6 PASS: per-slot controller's realized voltages stay in the tight band, \
         worst margin {worst:.3e} <= 1e-6"
    );
}

#[test]
fn criterion_7_power_flow_matches_its_oracles() {
    let tree = tree();
    // Fixed-point residual and substation energy identity at 40% loading.
    let n = tree.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for b in tree.non_root() {
        let bus = tree.bus(b);
        let pc = 0.4 * bus.peak_pu * bus.power_factor;
        p[b] = -pc;
        q[b] = bus.shunt_pu - pc * bus.tan_phi();
    }
    let sol = solve_radial_acpf(tree, &p, &q, 1.0, 1e-10, 100).unwrap();
    let resid = pf_residual(tree, &p, &q, 1.0, &sol);
    assert!(resid <= 1e-9, "power-flow residual {resid:.3e}");
    let ident = substation_energy_identity(tree, &p, &sol);
    assert!(ident <= 1e-8, "energy identity mismatch {ident:.3e}");

    // The realized flow reproduces the exact cone model's voltages and head
    // power wherever the relaxation is tight.
    let mut cone_gap = 0.0f64;
    for rec in &stationary().dem.records {
        cone_gap = cone_gap.max((rec.p0_model - rec.p0_ac).abs());
        for b in tree.non_root() {
            cone_gap = cone_gap.max((rec.v_model[b] - rec.v_ac[b]).abs());
        }
    }
    assert!(cone_gap <= 1e-5, "cone-vs-realized gap {cone_gap:.3e}");

    // Two-bus case against an independent scalar fixed point.
    let two = parse_feeder(
        r#"{
            "v_base_kv": 1.0, "s_base_mva": 1.0,
            "buses": [{"id": 0, "root": true}, {"id": 1}],
            "lines": [{"from": 0, "to": 1, "r_ohm": 0.02, "x_ohm": 0.015}]
        }"#,
    )
    .unwrap()
    .into_tree()
    .unwrap();
    let (pl, ql, r, x) = (-0.3, -0.1, 0.02, 0.015);
    let mut ell = 0.0f64;
    for _ in 0..200 {
        let pf = r * ell - pl;
        let qf = x * ell - ql;
        let next = (pf * pf + qf * qf) / 1.0;
        if (next - ell).abs() < 1e-16 {
            ell = next;
            break;
        }
        ell = next;
    }
    let pf = r * ell - pl;
    let qf = x * ell - ql;
    let v1 = 1.0 - 2.0 * (r * pf + x * qf) + (r * r + x * x) * ell;
    let sol2 = solve_radial_acpf(&two, &[0.0, pl], &[0.0, ql], 1.0, 1e-12, 100).unwrap();
    let two_bus_err = (sol2.v[1] - v1)
        .abs()
        .max((sol2.ell[1] - ell).abs())
        .max((sol2.p_flow[1] - pf).abs())
        .max((sol2.q_flow[1] - qf).abs());
    assert!(
        two_bus_err <= 1e-10,
        "two-bus oracle error {two_bus_err:.3e}"
    );

    println!(
        "criterion 7 PASS: residual {resid:.2e} <= 1e-9, energy identity {ident:.2e} <= 1e-8, \
         cone-vs-realized gap {cone_gap:.2e} <= 1e-5, two-bus oracle error {two_bus_err:.2e} <= 1e-10"
    );
}

#[test]
fn criterion_8_conic_wrapper_matches_analytic_and_enumerated_optima() {
    let opts = SolveOptions::default();
    // minimize x subject to ||(0.3, 0.4)|| <= x  =>  x* = 0.5
    let mut p = ConicProblem::new(1);
    p.c[0] = 1.0;
    p.add_cone(
        AffineExpr::var(0),
        vec![AffineExpr::new(vec![], 0.3), AffineExpr::new(vec![], 0.4)],
    );
    let sol = conic::solve(&p, opts).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.z[0] - 0.5).abs() <= 1e-6);

    // minimize (z - 1)^2 over 0 <= z <= 0.5  =>  z* = 0.5, value 0.25
    let mut p = ConicProblem::new(1);
    p.c[0] = -2.0;
    p.h[0] = 1.0;
    p.bound(0, 0.0, 0.5);
    let sol = conic::solve(&p, opts).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.z[0] - 0.5).abs() <= 1e-6);
    assert!(((sol.z[0] - 1.0).powi(2) - 0.25).abs() <= 1e-6);

    // 25 random box-plus-halfspace LPs against brute-force vertex
    // enumeration of the feasible polygon.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..25 {
        let mut coef = || -> f64 {
            loop {
                let c: f64 = rng.random_range(-2.0..2.0);
                if c.abs() >= 0.05 {
                    return c;
                }
            }
        };
        let (c0, c1) = (coef(), coef());
        let a0: f64 = rng.random_range(0.2..1.5);
        let a1: f64 = rng.random_range(0.2..1.5);
        let b: f64 = rng.random_range(0.1..(a0 + a1 - 0.1));

        // Candidate vertices: box corners satisfying the halfspace, plus the
        // cut line's crossings of the box edges.
        let mut candidates: Vec<[f64; 2]> = Vec::new();
        for z0 in [0.0, 1.0] {
            for z1 in [0.0, 1.0] {
                if a0 * z0 + a1 * z1 >= b - 1e-12 {
                    candidates.push([z0, z1]);
                }
            }
        }
        let in_box = |z: f64| (-1e-12..=1.0 + 1e-12).contains(&z);
        for z0 in [0.0, 1.0] {
            let z1 = (b - a0 * z0) / a1;
            if in_box(z1) {
                candidates.push([z0, z1]);
            }
        }
        for z1 in [0.0, 1.0] {
            let z0 = (b - a1 * z1) / a0;
            if in_box(z0) {
                candidates.push([z0, z1]);
            }
        }
        let best = candidates
            .iter()
            .map(|z| c0 * z[0] + c1 * z[1])
            .fold(f64::INFINITY, f64::min);

        let mut p = ConicProblem::new(2);
        p.c = vec![c0, c1];
        p.bound(0, 0.0, 1.0);
        p.bound(1, 0.0, 1.0);
        p.add_nonneg(AffineExpr::new(vec![(0, a0), (1, a1)], -b));
        let sol = conic::solve(&p, opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "case {case}");
        assert!(
            (sol.objective - best).abs() <= 1e-6,
            "case {case}: solver {} vs enumerated {best}",
            sol.objective
        );
    }
    println!(
        "criterion 8 PASS: norm-bound and clipped-quadratic analytic optima matched, \
         25 random LPs matched vertex enumeration to 1e-6"
    );
}

#[test]
fn criterion_9_dual_ascent_projection_is_exact_arithmetic() {
    let tree = parse_feeder(
        r#"{
            "v_base_kv": 12.0, "s_base_mva": 1.0,
            "buses": [
                {"id": 0, "root": true},
                {"id": 1, "peak_load_mva": 0.5, "power_factor": 0.9,
                 "pv_mw": 1.0, "s_mva": 0.8, "s_bar_mva": 1.04},
                {"id": 2, "peak_load_mva": 0.3, "power_factor": 0.85,
                 "pv_mw": 0.5, "s_mva": 1.2, "s_bar_mva": 1.56}
            ],
            "lines": [
                {"from": 0, "to": 1, "r_ohm": 1.0, "x_ohm": 1.0},
                {"from": 1, "to": 2, "r_ohm": 0.5, "x_ohm": 0.7}
            ]
        }"#,
    )
    .unwrap()
    .into_tree()
    .unwrap();
    let limits = LimitsProfile::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = tree.n_buses();
    for _ in 0..1000 {
        let mu: f64 = rng.random_range(0.01..2.0);
        let mut dual = DualState::zeros(n);
        let mut p_g = vec![0.0; n];
        let mut q_g = vec![0.0; n];
        let mut v = vec![1.0; n];
        for b in tree.non_root() {
            dual.nu[b] = rng.random_range(0.0..1.5);
            dual.xi_lower[b] = rng.random_range(0.0..1.5);
            dual.xi_upper[b] = rng.random_range(0.0..1.5);
            p_g[b] = rng.random_range(0.0..1.6);
            q_g[b] = rng.random_range(-1.0..1.0);
            v[b] = rng.random_range(0.88..1.13);
        }
        let before = dual.clone();
        let setpoints = Setpoints {
            p_g: p_g.clone(),
            q_g: q_g.clone(),
        };
        dual_update(&tree, &mut dual, &setpoints, &v, &limits, mu);
        assert!(dual.is_nonnegative());
        for b in tree.non_root() {
            let s = tree.bus(b).s_pu;
            let load = p_g[b] * p_g[b] + q_g[b] * q_g[b];
            assert_eq!(dual.nu[b], (before.nu[b] + mu * (load - s * s)).max(0.0));
            assert_eq!(
                dual.xi_lower[b],
                (before.xi_lower[b] + mu * (limits.v_l - v[b])).max(0.0)
            );
            assert_eq!(
                dual.xi_upper[b],
                (before.xi_upper[b] + mu * (v[b] - limits.v_u)).max(0.0)
            );
        }
    }
    println!(
        "criterion 9 PASS: 1000 random (dual, subgradient, step) triples reproduced the \
         projected update bit-exactly and stayed non-negative"
    );
}

#[test]
fn criterion_10_linearized_model_tracks_realized_voltages() {
    let tree = tree();
    let slots = gen_synthetic(
        tree,
        &SyntheticConfig {
            n_slots: 100,
            seed: 42,
            ..SyntheticConfig::default()
        },
    )
    .unwrap();
    let traj = run_horizon(
        tree,
        &slots,
        &ControllerConfig {
            mode: Mode::Dem,
            model: GridModel::Ldf,
            solve: SolveOptions {
                tol: 1e-9,
                max_iter: 200,
            },
            ..ControllerConfig::default()
        },
    )
    .unwrap();
    let fid = metrics::model_fidelity(tree, &traj.records);
    // The lossless model's squared-domain error roughly doubles the
    // magnitude error; report every slot past the threshold there rather
    // than hiding them behind the headline number.
    let over = fid.slots_over_pu2(0.01);
    for &(t, err) in &over {
        println!("criterion 10 note: slot {t} squared-domain error {err:.4e} > 1e-2 p.u.^2");
    }
    let max_pu = fid.max_pu();
    assert!(max_pu <= 0.01, "magnitude-domain error {max_pu:.3e}");
    println!(
        "criterion 10 PASS: worst model-vs-realized voltage error {max_pu:.3e} p.u. <= 0.01 over \
         100 random slots ({} slots over the same threshold in the squared domain, max {:.3e}, \
         reported above)",
        over.len(),
        fid.max_pu2()
    );
}
