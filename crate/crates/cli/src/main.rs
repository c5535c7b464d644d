use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use cpmpc::baselines::StrategyMode;
use cpmpc::harness::{
    compare_report, load_config, run_scenario, sweep_disturbance_polygon, write_compare, write_polygons, write_run,
    PolygonEntry, RunRecord, ScenarioConfig,
};
use cpmpc::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_FELL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cpmpc",
    version,
    about = "Capture-point MPC balance simulations and push-recovery sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory CSV and summary.
    Simulate {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep push directions and bisect the largest recoverable impulse.
    SweepDp {
        config: PathBuf,
        /// Strategy modes to sweep (full, m2, m3, m4, m5); defaults to the configured mode.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        modes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the summaries of two or more run directories.
    Compare {
        #[arg(num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
        /// Directory for compare.csv and compare.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Parse and check a scenario file.
    Validate { config: PathBuf },
}

enum Failure {
    Config(String),
    Fell(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    load_config(path).map_err(|e| match e {
        Error::Io(m) => Failure::Config(m),
        other => other.into(),
    })
}

fn simulate(config: PathBuf, out: Option<PathBuf>) -> Result<(), Failure> {
    let sc = load(&config)?;
    let cfg = sc.closed_loop()?;
    let result = run_scenario(&cfg)?;
    let dir = out.unwrap_or_else(|| sc.output.dir.clone());
    let (csv, summary) = write_run(&dir, &sc, &result)?;
    let s = &result.summary;
    println!(
        "cp rms x {:.3} cm  y {:.3} cm | b rms x {:.3} cm  y {:.3} cm | fell {}",
        100.0 * s.cp_rms_x_m,
        100.0 * s.cp_rms_y_m,
        100.0 * s.cp_offset_rms_x_m,
        100.0 * s.cp_offset_rms_y_m,
        s.fell
    );
    println!("wrote {} and {}", csv.display(), summary.display());
    if sc.require_recovery && s.fell {
        return Err(Failure::Fell(format!(
            "fell at {:.2} s in a scenario that requires recovery",
            s.fall_time_s.unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

fn sweep(config: PathBuf, modes: Vec<String>, out: Option<PathBuf>) -> Result<(), Failure> {
    let sc = load(&config)?;
    let modes: Vec<StrategyMode> = if modes.is_empty() {
        vec![sc.controller.mode]
    } else {
        modes
            .iter()
            .map(|m| StrategyMode::parse(m).ok_or_else(|| Failure::Config(format!("unknown strategy mode `{m}`"))))
            .collect::<Result<_, _>>()?
    };
    let mut entries = Vec::new();
    for mode in modes {
        let mut cfg = sc.closed_loop_with_mode(mode)?;
        cfg.disturbances.clear();
        info!("sweeping mode {}", mode.label());
        let polygon = sweep_disturbance_polygon(&cfg, &sc.sweep)?;
        let impulses: Vec<String> = polygon.impulses().iter().map(|v| format!("{v:.1}")).collect();
        println!(
            "{:<5} average {:7.2} N·s  area {:9.1}  [{}]",
            mode.label(),
            polygon.average_ns(),
            polygon.area(),
            impulses.join(" ")
        );
        entries.push(PolygonEntry {
            mode: mode.label().to_string(),
            average_ns: polygon.average_ns(),
            area_ns2: polygon.area(),
            polygon,
        });
    }
    let dir = out.unwrap_or_else(|| sc.output.dir.clone());
    let path = write_polygons(&dir, &sc.scenario, entries)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(runs: Vec<PathBuf>, out: PathBuf) -> Result<(), Failure> {
    let records = runs
        .iter()
        .map(|d| RunRecord::load_dir(d))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare_report(&records)?;
    for d in &report.deltas {
        let pct = d
            .delta_pct
            .map(|p| format!("{p:+.2} %"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "{:<22} {} -> {}: {:.4} -> {:.4} ({pct})",
            d.metric, d.base, d.other, d.base_value, d.other_value
        );
    }
    let (csv, json) = write_compare(&out, &report)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn validate(config: PathBuf) -> Result<(), Failure> {
    let sc = load(&config)?;
    sc.closed_loop()?;
    println!("{}: ok", config.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => simulate(config, out),
        Command::SweepDp { config, modes, out } => sweep(config, modes, out),
        Command::Compare { runs, out } => compare(runs, out),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Fell(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_FELL)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
