//! End-to-end checks of the binary: exit codes, artifact layout,
//! determinism, and the flush-on-abort path.

use std::path::Path;
use std::process::{Command, Output};

fn gridem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TWO_BUS_FEEDER: &str = r#"{
    "v_base_kv": 12.0, "s_base_mva": 1.0,
    "buses": [
        {"id": 0, "root": true},
        {"id": 1, "peak_load_mva": 0.5, "power_factor": 0.9,
         "pv_mw": 1.0, "s_mva": 1.0, "s_bar_mva": 1.3}
    ],
    "lines": [{"from": 0, "to": 1, "r_ohm": 1.0, "x_ohm": 1.0}]
}"#;

/// Small two-controller experiment on the two-bus feeder; fast enough to run
/// several times per test.
fn tiny_config(feeder_path: &Path, out_dir: &Path) -> String {
    format!(
        r#"{{
            "feeder": {{"path": {feeder:?}}},
            "scenario": {{"synthetic": {{
                "load_fraction": 0.4, "gen_fraction": 0.8,
                "noise_std_fraction": 0.05, "n_slots": 6, "seed": 1,
                "prices": {{"schedule": {{"constant": {{"pi0": 30.0, "pif": 15.0}}}}}}
            }}}},
            "controllers": [
                {{"mode": "eem", "model": "bfm", "mu": 0.1}},
                {{"mode": "dem", "model": "bfm"}}
            ],
            "output_dir": {out:?}
        }}"#,
        feeder = feeder_path.display().to_string(),
        out = out_dir.display().to_string(),
    )
}

#[test]
fn validate_feeder_reports_the_bundled_network() {
    let out = gridem(&["validate-feeder", "--builtin", "sce56"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("56 buses, 55 lines, 2 PV buses, 4 capacitor buses"),
        "{text}"
    );
    assert!(text.contains("suspect rows kept as published: buses 3, 33"));
    assert!(text.trim_end().ends_with("valid"));
}

#[test]
fn validate_feeder_rejects_cycles_and_bad_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{
            "v_base_kv": 12.0, "s_base_mva": 1.0,
            "buses": [{"id": 0, "root": true}, {"id": 1}, {"id": 2}],
            "lines": [
                {"from": 0, "to": 1, "r_ohm": 1.0, "x_ohm": 1.0},
                {"from": 1, "to": 2, "r_ohm": 1.0, "x_ohm": 1.0},
                {"from": 2, "to": 0, "r_ohm": 1.0, "x_ohm": 1.0}
            ]
        }"#,
    )
    .unwrap();
    let out = gridem(&["validate-feeder", cyclic.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cycle"), "{}", stderr(&out));

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{
            "v_base_kv": 12.0, "s_base_mva": 1.0,
            "buses": [
                {"id": 0, "root": true},
                {"id": 1, "pv_mw": 1.0, "s_mva": 1.0, "s_bar_mva": 0.9}
            ],
            "lines": [{"from": 0, "to": 1, "r_ohm": 1.0, "x_ohm": 1.0}]
        }"#,
    )
    .unwrap();
    let out = gridem(&["validate-feeder", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bus 1"), "{}", stderr(&out));
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("feeder.json");
    std::fs::write(&feeder, TWO_BUS_FEEDER).unwrap();

    let run = |out_dir: &Path| {
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(&cfg_path, tiny_config(&feeder, out_dir)).unwrap();
        let out = gridem(&["run", "--config", cfg_path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    for name in [
        "eem-bfm-mu0.1-slots.csv",
        "dem-bfm-slots.csv",
        "summary.json",
    ] {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
    assert!(a.join("config.json").exists());

    let csv = std::fs::read_to_string(a.join("dem-bfm-slots.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,mode,model,cost_usd,time_avg_cost_usd_per_h,p0_pu,curtailment_pu_total,\
         v_min_ac,v_max_ac,v_min_model,v_max_model,dual_norm,exactness_gap,solver_iters"
    );
    assert_eq!(csv.lines().count(), 7);

    // A different seed must change the draws.
    let c = dir.path().join("c");
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(&feeder, &c)).unwrap();
    let out = gridem(&["run", "--config", cfg_path.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let reseeded = std::fs::read(c.join("dem-bfm-slots.csv")).unwrap();
    assert_ne!(
        std::fs::read(a.join("dem-bfm-slots.csv")).unwrap(),
        reseeded,
        "seed override had no effect"
    );
}

#[test]
fn compare_prints_an_aligned_table_and_requires_two_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("feeder.json");
    std::fs::write(&feeder, TWO_BUS_FEEDER).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(&feeder, &dir.path().join("out"))).unwrap();

    let out = gridem(&["compare", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let header_at = text.find("controller").expect("table header");
    let table = &text[header_at..];
    assert!(table.contains("eem-bfm-mu0.1"));
    assert!(table.contains("dem-bfm"));
    assert!(table.contains("cost_usd"));

    // A single controller leaves nothing to compare against.
    let cfg_single = dir.path().join("single.json");
    std::fs::write(
        &cfg_single,
        format!(
            r#"{{
                "feeder": {{"path": {feeder:?}}},
                "scenario": {{"synthetic": {{
                    "load_fraction": 0.4, "gen_fraction": 0.8,
                    "noise_std_fraction": 0.05, "n_slots": 6, "seed": 1,
                    "prices": {{"schedule": {{"constant": {{"pi0": 30.0, "pif": 15.0}}}}}}
                }}}},
                "controllers": [{{"mode": "dem", "model": "bfm"}}],
                "output_dir": {out:?}
            }}"#,
            feeder = feeder.display().to_string(),
            out = dir.path().join("out2").display().to_string(),
        ),
    )
    .unwrap();
    let out = gridem(&["compare", "--config", cfg_single.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("two controllers") || stderr(&out).contains("expected"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn aborted_runs_flush_partial_output_with_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("feeder.json");
    std::fs::write(&feeder, TWO_BUS_FEEDER).unwrap();
    let slots = dir.path().join("slots.csv");
    std::fs::write(
        &slots,
        "t,price_main,price_fit,p_c_1,q_c_1,pg_max_1\n\
         0,30,15,0.2,0.1,0.5\n\
         1,30,15,0.2,0.1,0.5\n\
         2,30,15,100,50,0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{
                "feeder": {{"path": {feeder:?}}},
                "scenario": {{"slots_csv": {{"path": {slots:?}}}}},
                "controllers": [{{"mode": "dem", "model": "bfm"}}],
                "output_dir": {out:?}
            }}"#,
            feeder = feeder.display().to_string(),
            slots = slots.display().to_string(),
            out = out_dir.display().to_string(),
        ),
    )
    .unwrap();

    let out = gridem(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("dem-bfm-slots.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "header, two kept slots, marker: {csv}");
    assert!(lines[3].starts_with("# truncated at slot 2"), "{csv}");
    // The combined summary is still written (empty of the failed run).
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn gen_scenario_output_feeds_back_as_a_slots_csv_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("feeder.json");
    std::fs::write(&feeder, TWO_BUS_FEEDER).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(&feeder, &dir.path().join("unused"))).unwrap();

    let dest = dir.path().join("slots.csv");
    let out = gridem(&[
        "gen-scenario",
        "--config",
        cfg_path.to_str().unwrap(),
        "--dest",
        dest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&dest).unwrap();
    assert!(text
        .lines()
        .next()
        .unwrap()
        .starts_with("t,price_main,price_fit,p_c_1"));
    assert_eq!(text.lines().count(), 7);

    // Replaying the generated file must reproduce the original run exactly.
    let replay_out = dir.path().join("replay");
    let direct_out = dir.path().join("direct");
    std::fs::write(&cfg_path, tiny_config(&feeder, &direct_out)).unwrap();
    let out = gridem(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let replay_cfg = dir.path().join("replay.json");
    std::fs::write(
        &replay_cfg,
        format!(
            r#"{{
                "feeder": {{"path": {feeder:?}}},
                "scenario": {{"slots_csv": {{"path": {slots:?}}}}},
                "controllers": [
                    {{"mode": "eem", "model": "bfm", "mu": 0.1}},
                    {{"mode": "dem", "model": "bfm"}}
                ],
                "output_dir": {out:?}
            }}"#,
            feeder = feeder.display().to_string(),
            slots = dest.display().to_string(),
            out = replay_out.display().to_string(),
        ),
    )
    .unwrap();
    let out = gridem(&["run", "--config", replay_cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(direct_out.join("eem-bfm-mu0.1-slots.csv")).unwrap(),
        std::fs::read(replay_out.join("eem-bfm-mu0.1-slots.csv")).unwrap(),
        "replayed scenario diverged from the generating run"
    );
}

#[test]
fn usage_and_missing_inputs_exit_one() {
    let out = gridem(&["run"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let out = gridem(&["run", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("fig2"), "{}", stderr(&out));

    let out = gridem(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("feeder.json");
    std::fs::write(&feeder, TWO_BUS_FEEDER).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{
                "feeder": {{"path": {feeder:?}}},
                "scenario": {{"slots_csv": {{"path": "/missing/slots.csv"}}}},
                "controllers": [{{"mode": "dem", "model": "bfm"}}],
                "output_dir": {out:?}
            }}"#,
            feeder = feeder.display().to_string(),
            out = dir.path().join("out").display().to_string(),
        ),
    )
    .unwrap();
    let out = gridem(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("file not found"), "{}", stderr(&out));

    let out = gridem(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("validate-feeder"));
}
