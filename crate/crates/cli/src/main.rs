use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tagloc::config::ExperimentConfig;
use tagloc::estimator::FilterMode;
use tagloc::mc::{emit_reports, run_scenario, ScenarioConfig};

/// Monte Carlo comparison of EKF and TIE-EKF tag-based localization.
#[derive(Parser, Debug)]
#[command(name = "tagloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario, or all of them, and write reports.
    Run {
        /// Scenario name, or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Override the scenario's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write per-step time series.
        #[arg(long)]
        timeseries: bool,
        /// Number of leading iterations whose time series are written.
        #[arg(long, default_value_t = 1, requires = "timeseries")]
        timeseries_count: usize,
        /// Drop cross-corner correlation in the installation-error noise.
        #[arg(long)]
        per_corner_independent: bool,
    },
    /// List the configured scenarios.
    ListScenarios {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check a configuration file.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full configuration after defaults are applied.
        #[arg(long)]
        print_effective: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn select_scenarios(config: &ExperimentConfig, name: &str) -> Result<Vec<ScenarioConfig>> {
    if name == "all" {
        return Ok(config.scenarios());
    }
    match config.scenario(name) {
        Ok(s) => Ok(vec![s]),
        Err(_) => {
            let known: Vec<String> = config.scenarios().into_iter().map(|s| s.name).collect();
            bail!("unknown scenario {name:?}; known: {}", known.join(", "))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: &str,
    iterations: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
    timeseries: bool,
    timeseries_count: usize,
    per_corner_independent: bool,
) -> Result<()> {
    let mut config = load_config(config)?;
    if per_corner_independent {
        config.filter.per_corner_independent = true;
    }
    let experiment = config.experiment()?;
    let keep = if timeseries { timeseries_count } else { 0 };

    let mut summaries = Vec::new();
    let mut traces = Vec::new();
    for mut s in select_scenarios(&config, scenario)? {
        if let Some(n) = iterations {
            s.iterations = n;
        }
        if let Some(seed) = seed {
            s.base_seed = seed;
        }
        let started = std::time::Instant::now();
        let outcome =
            run_scenario(&experiment, &s, keep).with_context(|| format!("scenario {}", s.name))?;
        for mode in FilterMode::BOTH {
            if let Some(stats) = outcome.summary.method(mode) {
                println!(
                    "{:<16} {:<8} median {:.4} m  iqr {:.4} m  max {:.4} m  diverged {:.1}%",
                    s.name,
                    mode.name(),
                    stats.median,
                    stats.iqr,
                    stats.max,
                    100.0 * stats.divergence_fraction
                );
            }
        }
        log::info!("{} finished in {:.1?}", s.name, started.elapsed());
        traces.extend(outcome.traces.into_iter().map(|t| (s.name.clone(), t)));
        summaries.push(outcome.summary);
    }
    let paths = emit_reports(&summaries, &traces, out)
        .with_context(|| format!("writing reports to {}", out.display()))?;
    println!("wrote {}", paths.summary_csv.display());
    println!("wrote {}", paths.samples_csv.display());
    println!("wrote {}", paths.summary_json.display());
    if !paths.timeseries.is_empty() {
        println!("wrote {} time series", paths.timeseries.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            iterations,
            seed,
            out,
            config,
            timeseries,
            timeseries_count,
            per_corner_independent,
        } => run(
            &scenario,
            iterations,
            seed,
            &out,
            config.as_deref(),
            timeseries,
            timeseries_count,
            per_corner_independent,
        ),
        Command::ListScenarios { config } => load_config(config.as_deref()).map(|c| {
            for s in c.scenarios() {
                println!(
                    "{:<16} trajectory={:<4} level={:<8} tags={:?} iterations={} seed={}",
                    s.name,
                    s.trajectory,
                    s.level.name(),
                    s.perturbed_ids,
                    s.iterations,
                    s.base_seed
                );
            }
        }),
        Command::ValidateConfig {
            config,
            print_effective,
        } => load_config(config.as_deref()).and_then(|c| {
            if print_effective {
                print!("{}", c.to_toml_string()?);
            } else {
                println!("ok");
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
