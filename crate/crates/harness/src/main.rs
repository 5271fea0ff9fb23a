use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lap_core::walker::{simulate_walkers, WalkerConfig};
use lap_harness::config::CONFIG_REFERENCE;
use lap_harness::experiment::read_trace;
use lap_harness::walkers::{write_walker_csv, Statistic};
use lap_harness::{load_config, run_experiment, sweep, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "lap", version, about = "Loss adapted plasticity experiments", after_long_help = CONFIG_REFERENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics and traces.
    #[command(after_long_help = CONFIG_REFERENCE)]
    Run(RunArgs),
    /// Run the `[sweep]` grid and write an aggregate table.
    #[command(after_long_help = CONFIG_REFERENCE)]
    Sweep(RunArgs),
    /// Simulate distrust random walks over leniency and mean-shift grids.
    Walkers(WalkerArgs),
    /// Summarize a trace CSV: final distrust and gradient scale per source.
    InspectTrace {
        /// Trace file written by `run`.
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML); keys are listed under --help.
    #[arg(long)]
    config: PathBuf,
    /// Seed to run instead of the configured list; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force LAP on or off.
    #[arg(long, value_enum)]
    lap: Option<Toggle>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = load_config(&self.config)?;
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(t) = self.lap {
            cfg.lap.enabled = matches!(t, Toggle::On);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        Ok((cfg, out))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StatisticArg {
    Final,
    TimeAverage,
}

#[derive(Args)]
struct WalkerArgs {
    /// Mean shifts of the standardized loss.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    shifts: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
    leniencies: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    walkers: usize,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    depression_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distrust summary written to `mean_distrust`.
    #[arg(long, value_enum, default_value = "final")]
    statistic: StatisticArg,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| HarnessError::io(path, e))?,
    ))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, out) = args.resolve()?;
            let runs = run_experiment(&cfg, Some(&out))?;
            for r in &runs {
                println!(
                    "seed {}: {} steps, val accuracy {:.4}, test accuracy {:.4}",
                    r.seed,
                    r.steps,
                    r.final_val_accuracy(),
                    r.final_test_accuracy()
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep(args) => {
            let (cfg, out) = args.resolve()?;
            for row in sweep(&cfg, Some(&out))? {
                println!(
                    "point {:03}: leniency {} depression_strength {} history_length {} rate {} -> {:.4} ± {:.4}",
                    row.point,
                    row.leniency,
                    row.depression_strength,
                    row.history_length,
                    row.corruption_rate,
                    row.mean_accuracy,
                    row.std_accuracy
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Walkers(a) => {
            let cfg = WalkerConfig {
                mean_shifts: a.shifts,
                leniencies: a.leniencies,
                n_walkers: a.walkers,
                n_steps: a.steps,
                depression_strength: a.depression_strength,
                seed: a.seed,
            };
            let rows = simulate_walkers(&cfg)?;
            let statistic = match a.statistic {
                StatisticArg::Final => Statistic::Final,
                StatisticArg::TimeAverage => Statistic::TimeAverage,
            };
            match a.out {
                Some(path) => write_walker_csv(create(&path)?, &rows, statistic)?,
                None => write_walker_csv(io::stdout().lock(), &rows, statistic)?,
            }
        }
        Command::InspectTrace { path } => {
            let trace = read_trace(&path)?;
            let Some(last) = trace.iter().map(|r| r.step).max() else {
                println!("empty trace");
                return Ok(());
            };
            let mut stdout = io::stdout().lock();
            let io_err = |e| HarnessError::io("<stdout>", e);
            writeln!(stdout, "final step {last}").map_err(io_err)?;
            writeln!(
                stdout,
                "source  corrupt  distrust  gradient_scale  min_gradient_scale"
            )
            .map_err(io_err)?;
            for row in trace.iter().filter(|r| r.step == last) {
                let min = trace
                    .iter()
                    .filter(|r| r.source_id == row.source_id)
                    .map(|r| r.gradient_scale)
                    .fold(f64::INFINITY, f64::min);
                writeln!(
                    stdout,
                    "{:>6}  {:>7}  {:>8}  {:>14.6}  {:>18.6}",
                    row.source_id, row.is_corrupt, row.distrust, row.gradient_scale, min
                )
                .map_err(io_err)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
