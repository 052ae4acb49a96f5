use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use plasticity_core::diagnostics::Metric;
use plasticity_core::harness::{
    analyze, plot, run_experiment, sweep, ExperimentConfig, HarnessError, PlotKind, Preset,
    RunArchive, SUMMARY_DIR,
};
use plasticity_core::interventions::InterventionConfig;

#[derive(Parser)]
#[command(name = "plasticity", version, about = "Plasticity-loss experiments for PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method over every seed and write archives.
    Run {
        /// TOML experiment file; the preset is used when omitted.
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Comma-separated method labels, e.g. `warm_start,regen_reg+layer_norm`.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the statistical summary from archives.
    Analyze {
        /// Method archives, or directories containing them.
        #[arg(required = true)]
        archives: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw SVG figures from archives.
    Plot {
        #[arg(required = true)]
        archives: Vec<PathBuf>,
        /// epoch_curve, round_curve, metric_curve or correlation_scatter.
        #[arg(long)]
        kind: String,
        /// Metrics for metric_curve and correlation_scatter (default: all).
        #[arg(long = "metric", value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
    /// Repeat an experiment for several values of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted parameter path, e.g. `ppo.learning_rate`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Print a preset as an editable TOML experiment file.
    InitConfig {
        #[arg(long, default_value = "desk")]
        preset: String,
    },
}

fn load_archives(paths: &[PathBuf]) -> Result<Vec<RunArchive>, HarnessError> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("config.snapshot").exists() {
            out.push(RunArchive::load(p)?);
            continue;
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| HarnessError::Io { path: p.clone(), source: e })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("config.snapshot").exists())
            .collect();
        if dirs.is_empty() {
            return Err(HarnessError::Archive(format!(
                "{} holds no run archive",
                p.display()
            )));
        }
        dirs.sort();
        for d in dirs {
            out.push(RunArchive::load(&d)?);
        }
    }
    Ok(out)
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>, HarnessError> {
    if names.is_empty() {
        return Ok(Metric::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse::<Metric>().map_err(HarnessError::Config))
        .collect()
}

fn default_summary_dir(archives: &[PathBuf]) -> PathBuf {
    let first = &archives[0];
    let base = if first.join("config.snapshot").exists() {
        first.parent().unwrap_or(Path::new("."))
    } else {
        first.as_path()
    };
    base.join(SUMMARY_DIR)
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            config,
            preset,
            methods,
            seeds,
            threads,
            out,
            seed,
        } => {
            let mut c = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::preset(preset.parse::<Preset>()?),
            };
            if !methods.is_empty() {
                c.interventions = methods
                    .iter()
                    .map(|m| InterventionConfig::from_label(m))
                    .collect::<Result<_, _>>()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            if let Some(n) = seeds {
                c.n_seeds = n;
            }
            if let Some(t) = threads {
                c.threads = t;
            }
            if let Some(o) = out {
                c.output_dir = o;
            }
            if let Some(s) = seed {
                c.master_seed = s;
            }
            let (_, summary) = run_experiment(&c)?;
            println!("{}", summary.to_text());
            println!("archives written to {}", c.output_dir.display());
        }
        Command::Analyze { archives, out } => {
            let loaded = load_archives(&archives)?;
            let summary = analyze(&loaded)?;
            let dir = out.unwrap_or_else(|| default_summary_dir(&archives));
            summary.write(&dir)?;
            println!("{}", summary.to_text());
            println!("tables written to {}", dir.display());
        }
        Command::Plot {
            archives,
            kind,
            metrics,
            out,
        } => {
            let kind: PlotKind = kind.parse()?;
            let metrics = parse_metrics(&metrics)?;
            let loaded = load_archives(&archives)?;
            for p in plot(&loaded, kind, &metrics, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let c = ExperimentConfig::load(&config)?;
            for point in sweep(&c, &param, &values)? {
                println!("== {param} = {} ==", point.value);
                for m in &point.summary.methods {
                    println!(
                        "{:<32} train {:>9.4} ± {:.4}   test {:>9.4} ± {:.4}",
                        m.method, m.train_mean, m.train_se, m.test_mean, m.test_se
                    );
                }
            }
        }
        Command::InitConfig { preset } => {
            print!("{}", ExperimentConfig::preset(preset.parse::<Preset>()?).to_toml_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command).context("plasticity failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<HarnessError>()
                .map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
