//! Command-line driver: single experiment runs, policy comparisons on
//! common random numbers, feeder validation, and scenario generation.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation, 2 when a run
//! starts and then breaks.

mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use experiment::{
    compare_rows, execute, preset, print_compare_table, runtime, validation, CliError,
    ExperimentConfig,
};
use gridem::feeder::{builtin_sce56, load_feeder, FeederTree};
use gridem::scenario::write_slots_csv;

#[derive(Parser)]
#[command(
    name = "gridem",
    version,
    about = "Feeder-scale energy management experiments",
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset: fig2, fig3, or fig4-6-synthetic.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Override the experiment's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            _ => {
                return Err(validation(
                    "give exactly one of --config FILE or --preset NAME",
                ))
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write per-slot CSVs, summary.json, and a
    /// config echo into the output directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write per-bus realized-voltage CSVs.
        #[arg(long)]
        voltages: bool,
    },
    /// Run two or more controllers on identical scenario draws and print an
    /// aligned comparison table.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Parse a feeder file (or a bundled one) and report statistics, ranges,
    /// and suspect data.
    ValidateFeeder {
        /// Feeder file (JSON).
        path: Option<PathBuf>,
        /// Bundled feeder name (sce56).
        #[arg(long, value_name = "NAME", conflicts_with = "path")]
        builtin: Option<String>,
    },
    /// Materialize the configured scenario's slot stream to CSV without
    /// running any controller.
    GenScenario {
        #[command(flatten)]
        config: ConfigArgs,
        /// Destination CSV file.
        #[arg(long, value_name = "FILE", id = "dest")]
        dest: PathBuf,
    },
}

fn main() -> ExitCode {
    // Die quietly when the reader goes away (`gridem ... | head`), like any
    // other pipeline citizen, instead of panicking on a closed stdout.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here too; they print to stdout and
            // exit clean, everything else is a usage problem.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, voltages } => {
            let cfg = config.resolve()?;
            let output = execute(&cfg, voltages)?;
            println!("artifacts in {}", output.output_dir.display());
            Ok(())
        }
        Command::Compare { config } => {
            let cfg = config.resolve()?;
            if cfg.controllers.len() < 2 {
                return Err(validation("compare needs at least two controllers"));
            }
            let output = execute(&cfg, false)?;
            print_compare_table(&compare_rows(&output));
            Ok(())
        }
        Command::ValidateFeeder { path, builtin } => cmd_validate_feeder(path, builtin),
        Command::GenScenario { config, dest } => {
            let cfg = config.resolve()?;
            let tree = cfg.feeder.build()?;
            cfg.check_referenced_files()?;
            let slots = cfg
                .scenario
                .materialize(&tree, Some(cfg.seed))
                .map_err(validation)?;
            write_slots_csv(&tree, &slots, &dest).map_err(runtime)?;
            println!("wrote {} slots to {}", slots.len(), dest.display());
            Ok(())
        }
    }
}

fn cmd_validate_feeder(path: Option<PathBuf>, builtin: Option<String>) -> Result<(), CliError> {
    let (tree, origin) = match (path, builtin) {
        (Some(path), None) => {
            let tree = load_feeder(&path).map_err(validation)?;
            (tree, path.display().to_string())
        }
        (None, Some(name)) if name == "sce56" => (builtin_sce56(), "builtin sce56".to_string()),
        (None, Some(name)) => {
            return Err(validation(format!(
                "unknown builtin feeder {name:?}; only \"sce56\" is bundled"
            )))
        }
        _ => return Err(validation("give a feeder file or --builtin sce56")),
    };
    print_feeder_report(&tree, &origin);
    Ok(())
}

fn print_feeder_report(tree: &FeederTree, origin: &str) {
    let pv_buses = tree.non_root().filter(|&b| tree.bus(b).pv_pu > 0.0).count();
    let cap_buses = tree
        .non_root()
        .filter(|&b| tree.bus(b).shunt_pu > 0.0)
        .count();
    println!(
        "{origin}: {} buses, {} lines, {pv_buses} PV buses, {cap_buses} capacitor buses",
        tree.n_buses(),
        tree.n_lines()
    );
    println!(
        "bases: {} kV, {} MVA ({:.2} ohm)",
        tree.v_base_kv(),
        tree.s_base_mva(),
        tree.z_base_ohm()
    );
    let span = |values: &mut dyn Iterator<Item = f64>| {
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    };
    let (r_lo, r_hi) = span(&mut tree.non_root().map(|b| tree.r(b)));
    let (x_lo, x_hi) = span(&mut tree.non_root().map(|b| tree.x(b)));
    println!("line impedance: r {r_lo:.5}..{r_hi:.5} p.u., x {x_lo:.5}..{x_hi:.5} p.u.");
    let peak: f64 = tree.non_root().map(|b| tree.bus(b).peak_pu).sum();
    let pv: f64 = tree.non_root().map(|b| tree.bus(b).pv_pu).sum();
    let shunt: f64 = tree.non_root().map(|b| tree.bus(b).shunt_pu).sum();
    println!(
        "totals: peak load {peak:.3} p.u., pv nameplate {pv:.3} p.u., shunt capacitors {shunt:.3} p.u."
    );
    let suspect: Vec<usize> = tree
        .non_root()
        .filter(|&b| tree.bus(b).suspect)
        .map(|b| tree.label(b))
        .collect();
    if suspect.is_empty() {
        println!("no suspect rows");
    } else {
        let ids: Vec<String> = suspect.iter().map(|id| id.to_string()).collect();
        println!(
            "suspect rows kept as published: buses {} (correct via an experiment config's feeder.overrides)",
            ids.join(", ")
        );
    }
    println!("valid");
}
