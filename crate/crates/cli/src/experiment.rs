//! Experiment configuration, bundled presets, and the executors behind the
//! `run` and `compare` subcommands.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gridem::conic::SolveOptions;
use gridem::controller::{ControllerConfig, Mode, Trajectory};
use gridem::feeder::{
    builtin_sce56_with, load_feeder_with, sce56_bus3_override, BusOverride, FeederTree,
};
use gridem::metrics::{self, RunSummary};
use gridem::runner::{run_jobs, Job};
use gridem::scenario::{DiurnalConfig, ScenarioSpec, SyntheticConfig};
use gridem::Error as CoreError;

/// Failures split by phase: bad inputs exit 1, runs that start and then
/// break exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub(crate) fn validation(err: impl fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

pub(crate) fn runtime(err: impl fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

fn default_replicas() -> usize {
    1
}

fn default_seed() -> u64 {
    1
}

fn default_retail() -> f64 {
    30.0
}

/// Where the feeder comes from — the bundled network or a JSON file — plus
/// optional per-bus corrections applied after parsing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSpec {
    /// Name of a bundled feeder; `"sce56"` is the only one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<BusOverride>,
}

impl FeederSpec {
    pub fn build(&self) -> Result<FeederTree, CliError> {
        match (&self.builtin, &self.path) {
            (Some(name), None) => {
                if name != "sce56" {
                    return Err(validation(format!(
                        "unknown builtin feeder {name:?}; only \"sce56\" is bundled"
                    )));
                }
                builtin_sce56_with(&self.overrides).map_err(validation)
            }
            (None, Some(path)) => load_feeder_with(path, &self.overrides).map_err(validation),
            _ => Err(validation(
                "feeder needs exactly one of \"builtin\" or \"path\"",
            )),
        }
    }
}

/// One experiment: a feeder, a slot stream, one or more controllers, and
/// how many re-seeded replicas to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub feeder: FeederSpec,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub controllers: Vec<ControllerConfig>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Base seed; replica `r` regenerates the scenario with `seed + r`, and
    /// every controller in a replica sees the identical slot sequence.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Retail tariff (cents/kWh) for the settlement report only; the
    /// controllers never see it. 30 is an assumed flat residential rate.
    #[serde(default = "default_retail")]
    pub retail_price: f64,
    /// Interior-point tolerance applied to every controller; solver options
    /// are not part of the per-controller config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_max_iter: Option<u32>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
    }

    /// Check every file the scenario and feeder point at before anything
    /// runs.
    pub fn check_referenced_files(&self) -> Result<(), CliError> {
        let mut referenced: Vec<&PathBuf> = Vec::new();
        match &self.scenario {
            ScenarioSpec::Trace(cfg) => {
                referenced.extend([&cfg.load_csv, &cfg.solar_csv, &cfg.mapping_csv]);
            }
            ScenarioSpec::SlotsCsv { path } => referenced.push(path),
            ScenarioSpec::Synthetic(_) | ScenarioSpec::Diurnal(_) => {}
        }
        if let Some(path) = &self.feeder.path {
            referenced.push(path);
        }
        for path in referenced {
            if !path.exists() {
                return Err(validation(format!("{}: file not found", path.display())));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.controllers.is_empty() {
            return Err(validation("no controllers configured"));
        }
        if self.replicas < 1 {
            return Err(validation("replicas must be at least 1"));
        }
        self.check_referenced_files()?;
        if self.replicas > 1
            && !matches!(
                self.scenario,
                ScenarioSpec::Synthetic(_) | ScenarioSpec::Diurnal(_)
            )
        {
            return Err(validation(
                "replicas > 1 needs a synthetic or diurnal scenario so each replica can be re-seeded",
            ));
        }
        if let Some(tol) = self.solve_tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(validation(format!("solve_tol must be positive, got {tol}")));
            }
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        let mut opts = SolveOptions::default();
        if let Some(tol) = self.solve_tol {
            opts.tol = tol;
        }
        if let Some(max_iter) = self.solve_max_iter {
            opts.max_iter = max_iter;
        }
        opts
    }
}

/// File-safe run label: mode, model, and (for the averaging controller) the
/// step size; an index suffix disambiguates duplicates.
fn controller_labels(controllers: &[ControllerConfig]) -> Vec<String> {
    let mut labels: Vec<String> = controllers
        .iter()
        .map(|c| match c.mode {
            Mode::NoControl => "no_control".to_string(),
            Mode::Dem => format!("dem-{}", c.model.as_str()),
            Mode::Eem => format!("eem-{}-mu{}", c.model.as_str(), c.mu),
        })
        .collect();
    let has_duplicates = labels
        .iter()
        .enumerate()
        .any(|(i, l)| labels[..i].contains(l));
    if has_duplicates {
        for (j, label) in labels.iter_mut().enumerate() {
            *label = format!("c{j}-{label}");
        }
    }
    labels
}

/// Everything one finished experiment leaves behind.
pub struct ExperimentOutput {
    pub labels: Vec<String>,
    /// `summaries[controller][replica]`, successes only (failed runs leave
    /// a hole reported through the returned error).
    pub summaries: Vec<Vec<RunSummary>>,
    pub output_dir: PathBuf,
}

/// Run every controller on every replica with common random numbers, write
/// per-run slot CSVs, a combined `summary.json`, and a `config.json` echo.
/// Partial trajectories from aborted runs are flushed with a truncation
/// marker before the error is reported.
pub fn execute(
    config: &ExperimentConfig,
    write_voltages: bool,
) -> Result<ExperimentOutput, CliError> {
    let tree = config.feeder.build()?;
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| validation(format!("{}: {e}", config.output_dir.display())))?;
    let echo_path = config.output_dir.join("config.json");
    let echo = serde_json::to_string_pretty(config).map_err(validation)?;
    std::fs::write(&echo_path, echo + "\n")
        .map_err(|e| runtime(format!("{}: {e}", echo_path.display())))?;

    let labels = controller_labels(&config.controllers);
    let solve = config.solve_options();
    let mut jobs = Vec::with_capacity(config.replicas * config.controllers.len());
    for rep in 0..config.replicas {
        let slots = config
            .scenario
            .materialize(&tree, Some(config.seed + rep as u64))
            .map_err(validation)?;
        for (i, ctrl) in config.controllers.iter().enumerate() {
            let run_label = if config.replicas > 1 {
                format!("{}-rep{rep}", labels[i])
            } else {
                labels[i].clone()
            };
            let ctrl = ControllerConfig {
                solve,
                ..ctrl.clone()
            };
            jobs.push(Job::new(run_label, ctrl, slots.clone()));
        }
    }

    let results = run_jobs(&tree, &jobs);

    let mut summaries: Vec<Vec<RunSummary>> = vec![Vec::new(); config.controllers.len()];
    let mut all: Vec<RunSummary> = Vec::new();
    let mut first_failure: Option<String> = None;
    for (idx, (job, result)) in jobs.iter().zip(results).enumerate() {
        let csv_path = config.output_dir.join(format!("{}-slots.csv", job.label));
        let mode = job.config.mode.as_str();
        let model = match job.config.mode {
            Mode::NoControl => "ac",
            _ => job.config.model.as_str(),
        };
        match result {
            Ok(traj) => {
                metrics::write_slot_csv(
                    &tree,
                    &traj.records,
                    mode,
                    model,
                    job.config.dt_s,
                    &csv_path,
                    None,
                )
                .map_err(runtime)?;
                if write_voltages {
                    let volt_path = config
                        .output_dir
                        .join(format!("{}-voltages.csv", job.label));
                    metrics::write_voltage_csv(&tree, &traj.records, &volt_path, true)
                        .map_err(runtime)?;
                }
                let summary = metrics::summarize(&tree, &traj, &job.label).map_err(runtime)?;
                report_run(config, &tree, job, &traj, &summary);
                summaries[idx % config.controllers.len()].push(summary.clone());
                all.push(summary);
            }
            Err(CoreError::RunAborted { t, partial, source }) => {
                let note = format!("truncated at slot {t}: {source}");
                metrics::write_slot_csv(
                    &tree,
                    &partial,
                    mode,
                    model,
                    job.config.dt_s,
                    &csv_path,
                    Some(&note),
                )
                .map_err(runtime)?;
                eprintln!("{}: {note} ({} slots kept)", job.label, partial.len());
                first_failure.get_or_insert(format!("{}: {note}", job.label));
            }
            Err(err) => {
                eprintln!("{}: {err}", job.label);
                first_failure.get_or_insert(format!("{}: {err}", job.label));
            }
        }
    }

    let summary_path = config.output_dir.join("summary.json");
    metrics::write_summary_json(&all, &summary_path).map_err(runtime)?;

    match first_failure {
        Some(msg) => Err(runtime(msg)),
        None => Ok(ExperimentOutput {
            labels,
            summaries,
            output_dir: config.output_dir.clone(),
        }),
    }
}

fn report_run(
    config: &ExperimentConfig,
    tree: &FeederTree,
    job: &Job,
    traj: &Trajectory,
    summary: &RunSummary,
) {
    println!(
        "{}: {} slots, total cost ${:.2}, curtailed {:.2} kWh, violation fraction {:.4}",
        job.label,
        summary.n_slots,
        summary.total_cost_usd,
        summary.total_curtailment_kwh,
        summary.violation.violation_fraction
    );
    let customers = metrics::customer_cost_totals(
        &job.slots,
        &traj.records,
        config.retail_price,
        tree,
        job.config.dt_s,
    )
    .map(|per_bus| per_bus.iter().sum::<f64>())
    .unwrap_or(f64::NAN);
    let utility =
        metrics::utility_cost_total(&traj.records, config.retail_price, tree, job.config.dt_s);
    println!(
        "{}: settlement at {} c/kWh retail: customers ${customers:.2}, utility ${utility:.2}",
        job.label, config.retail_price
    );
}

/// Aggregate the per-replica summaries of one controller into table cells:
/// mean total cost with its standard error, mean curtailment, mean violation
/// fraction.
pub struct CompareRow {
    pub label: String,
    pub runs: usize,
    pub mean_cost_usd: f64,
    pub se_cost_usd: f64,
    pub mean_curtailed_kwh: f64,
    pub mean_violation_fraction: f64,
}

pub fn compare_rows(output: &ExperimentOutput) -> Vec<CompareRow> {
    output
        .labels
        .iter()
        .zip(&output.summaries)
        .map(|(label, runs)| {
            let n = runs.len();
            let mean =
                |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n.max(1) as f64;
            let mean_cost = mean(&|s: &RunSummary| s.total_cost_usd);
            let se_cost = if n > 1 {
                let var = runs
                    .iter()
                    .map(|s| (s.total_cost_usd - mean_cost).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            CompareRow {
                label: label.clone(),
                runs: n,
                mean_cost_usd: mean_cost,
                se_cost_usd: se_cost,
                mean_curtailed_kwh: mean(&|s: &RunSummary| s.total_curtailment_kwh),
                mean_violation_fraction: mean(&|s: &RunSummary| s.violation.violation_fraction),
            }
        })
        .collect()
}

pub fn print_compare_table(rows: &[CompareRow]) {
    println!(
        "{:<24} {:>5} {:>14} {:>10} {:>14} {:>10}",
        "controller", "runs", "cost_usd", "se", "curtailed_kwh", "viol_frac"
    );
    for row in rows {
        println!(
            "{:<24} {:>5} {:>14.2} {:>10.2} {:>14.2} {:>10.4}",
            row.label,
            row.runs,
            row.mean_cost_usd,
            row.se_cost_usd,
            row.mean_curtailed_kwh,
            row.mean_violation_fraction
        );
    }
}

/// Bundled experiment setups. The two synthetic presets mirror the published
/// stationary runs; `fig4-6-synthetic` is an honest stand-in for the
/// real-data day (the metered traces are not redistributable), using the
/// same clear-sky day shape and the real-data step size.
pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let feeder = FeederSpec {
        builtin: Some("sce56".to_string()),
        path: None,
        overrides: vec![sce56_bus3_override()],
    };
    let eem = |mu: f64| ControllerConfig {
        mu,
        ..ControllerConfig::default()
    };
    let dem = ControllerConfig {
        mode: Mode::Dem,
        ..ControllerConfig::default()
    };
    match name {
        "fig2" => Ok(ExperimentConfig {
            feeder,
            scenario: ScenarioSpec::Synthetic(SyntheticConfig::default()),
            controllers: vec![eem(0.1), dem],
            replicas: 1,
            seed: 1,
            output_dir: PathBuf::from("out/fig2"),
            retail_price: default_retail(),
            solve_tol: Some(1e-9),
            solve_max_iter: None,
        }),
        "fig3" => Ok(ExperimentConfig {
            feeder,
            scenario: ScenarioSpec::Synthetic(SyntheticConfig {
                n_slots: 60,
                ..SyntheticConfig::default()
            }),
            controllers: vec![eem(0.1), eem(0.2), eem(0.3)],
            replicas: 20,
            seed: 1000,
            output_dir: PathBuf::from("out/fig3"),
            retail_price: default_retail(),
            solve_tol: Some(1e-9),
            solve_max_iter: None,
        }),
        "fig4-6-synthetic" => Ok(ExperimentConfig {
            feeder,
            scenario: ScenarioSpec::Diurnal(DiurnalConfig::default()),
            controllers: vec![
                eem(0.25),
                ControllerConfig {
                    mu: 0.25,
                    model: gridem::GridModel::Ldf,
                    ..ControllerConfig::default()
                },
                dem,
                ControllerConfig {
                    mode: Mode::NoControl,
                    ..ControllerConfig::default()
                },
            ],
            replicas: 1,
            seed: 1,
            output_dir: PathBuf::from("out/fig4-6-synthetic"),
            retail_price: default_retail(),
            solve_tol: Some(1e-8),
            solve_max_iter: None,
        }),
        other => Err(validation(format!(
            "unknown preset {other:?}; bundled presets: fig2, fig3, fig4-6-synthetic"
        ))),
    }
}
