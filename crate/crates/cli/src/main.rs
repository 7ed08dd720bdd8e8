//! `qhydro`: run quantile-calibration experiments, summarise them and export
//! plot-ready tables.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use qhydro::experiment::{
    emit_plot_data, load_basins, run_experiment, summarize_run, ExperimentConfig, ExperimentError, PlotSelection,
    SummaryTables, DATA_ROOT_ENV,
};
use qhydro::model::ModelVariant;

#[derive(Parser, Debug)]
#[command(name = "qhydro", version, about = "Quantile-loss calibration of GR rainfall-runoff models")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate and score every basin, variant and loss named in the config
    Run {
        config: PathBuf,
    },
    /// Relative-score and coverage summaries of a finished run
    Summarize {
        run_dir: PathBuf,
    },
    /// Hydrograph, scatter and summary tables for plotting
    PlotData {
        run_dir: PathBuf,
        #[arg(long)]
        basin: String,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        /// Model whose quantile hydrographs are exported (default: the benchmark)
        #[arg(long)]
        model: Option<ModelVariant>,
    },
    /// Check a config file and the data it points at without running anything
    ValidateConfig {
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env_overrides();
    cfg.validate()?;
    Ok(cfg)
}

fn print_tables(t: &SummaryTables) {
    println!("median relative score vs benchmark (validation)");
    for c in &t.median_relative {
        let m = c.median.map(|v| format!("{v:+.4}")).unwrap_or_else(|| "NA".into());
        println!("  {:<5} {:<16} {:>8}  (n={})", c.model, c.loss.to_string(), m, c.n_basins);
    }
    println!("median coverage (validation)");
    for c in &t.median_coverage {
        let m = c.median.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
        println!("  {:<5} {:<16} {:>8}  (n={})", c.model, c.loss.to_string(), m, c.n_basins);
    }
    if !t.exclusions.is_empty() {
        println!("{} basin cells excluded, see summary/exclusions.csv", t.exclusions.len());
    }
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let out = run_experiment(&cfg)?;
            println!(
                "{} parameter sets, {} score rows for {} basins ({} skipped) in {}",
                out.parameters.len(),
                out.scores.len(),
                out.manifest.basins.len(),
                out.manifest.skipped.len(),
                out.output_dir.display()
            );
            println!("manifest hash {}", out.manifest.manifest_hash);
        }
        Command::Summarize { run_dir } => {
            let tables = summarize_run(&run_dir)?;
            print_tables(&tables);
        }
        Command::PlotData {
            run_dir,
            basin,
            from,
            to,
            model,
        } => {
            let files = emit_plot_data(&run_dir, &PlotSelection { basin, from, to, model })?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            let (basins, skipped) = load_basins(&cfg)?;
            for s in &skipped {
                println!("skip {}: {}", s.basin_id, s.reason);
            }
            if basins.is_empty() {
                return Err(ExperimentError::Data("no usable basins".into()));
            }
            let per_basin = cfg.variants.len() * cfg.loss_specs().len();
            println!(
                "ok: {} basins x {} calibrations = {} jobs, data from {}",
                basins.len(),
                per_basin,
                basins.len() * per_basin,
                cfg.data_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    log::debug!("data root override variable: {DATA_ROOT_ENV}");

    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
