//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavefront_sim::coalescent::LambdaMeasure;
use wavefront_sim::config::{resolve, Overrides};
use wavefront_sim::runner::{
    cmd_check, cmd_simulate_coalescent, cmd_simulate_moran, cmd_simulate_sde, effective_threads,
    out_root, CheckArgs,
};

#[derive(Parser)]
#[command(
    name = "wavefront-sim",
    version,
    about = "Moran-model wave simulator with weak selection, plus its limit-process simulators and verification checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; names match the config-file keys.
#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Population size.
    #[arg(long = "N")]
    n: Option<u64>,
    /// Per-individual mutation rate.
    #[arg(long)]
    mu: Option<f64>,
    /// Strong-selection coefficient.
    #[arg(long)]
    s: Option<f64>,
    /// Weak-selection coefficient.
    #[arg(long)]
    alpha: Option<f64>,
    /// Target initial Y-fraction.
    #[arg(long)]
    y: Option<f64>,
    /// Horizon in wave-time units.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Base RNG seed; replicate i uses a documented pure derivation.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<u64>,
    /// Jump-size truncation for the limit SDE.
    #[arg(long = "p_min")]
    p_min: Option<f64>,
    /// Early-window log coefficient.
    #[arg(long = "early_c1")]
    early_c1: Option<f64>,
    /// Early-window additive constant (default derived from T).
    #[arg(long = "early_c2")]
    early_c2: Option<f64>,
    /// Worker threads; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output root (default: $WAVEFRONT_SIM_OUT or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            n: self.n,
            mu: self.mu,
            s: self.s,
            alpha: self.alpha,
            y: self.y,
            t_end: self.t_end,
            seed: self.seed,
            replicates: self.replicates,
            p_min: self.p_min,
            early_c1: self.early_c1,
            early_c2: self.early_c2,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate finite-N trajectories and export registries and observable paths.
    SimulateMoran {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate the limit jump-SDE.
    SimulateSde {
        #[command(flatten)]
        common: CommonArgs,
        /// Ensemble checkpoint times (SDE clock; finite-N rescaled time minus 2).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<f64>,
    },
    /// Simulate coalescent block-count chains.
    SimulateCoalescent {
        #[command(flatten)]
        common: CommonArgs,
        /// Initial block count.
        #[arg(long, default_value_t = 10)]
        k0: u64,
        /// Driving measure.
        #[arg(long, default_value = "bolthausen-sznitman")]
        measure: String,
    },
    /// Run a verification check; exit status 0 iff it passes.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// One of: duality, tau-spacing, family-size, martingale, trend, assumptions.
        #[arg(long)]
        which: String,
        /// Duality moment order.
        #[arg(long, default_value_t = 2)]
        k: u64,
        /// Duality evaluation time.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Trend population sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [10_000u64, 100_000])]
        n_list: Vec<u64>,
        /// Trend rescaled checkpoint times.
        #[arg(long, value_delimiter = ',', default_values_t = [3.0, 4.0])]
        t_list: Vec<f64>,
        /// Trend SDE-side replicates.
        #[arg(long, default_value_t = 30_000)]
        sde_replicates: u64,
        /// Family-size minimum pooled observations.
        #[arg(long, default_value_t = 1_000)]
        min_observations: usize,
        /// Martingale target type (default: first mid-window crossing).
        #[arg(long)]
        j: Option<u32>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::SimulateMoran { common } => {
            let cfg = resolve(common.config.as_deref(), &common.overrides())?;
            let threads = effective_threads(common.threads);
            let dir = cmd_simulate_moran(&cfg, threads, &out_root(common.out.as_deref()))?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SimulateSde {
            common,
            checkpoints,
        } => {
            let cfg = resolve(common.config.as_deref(), &common.overrides())?;
            let threads = effective_threads(common.threads);
            let dir =
                cmd_simulate_sde(&cfg, &checkpoints, threads, &out_root(common.out.as_deref()))?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SimulateCoalescent {
            common,
            k0,
            measure,
        } => {
            let cfg = resolve(common.config.as_deref(), &common.overrides())?;
            let measure = match measure.as_str() {
                "kingman" => LambdaMeasure::Kingman,
                "bolthausen-sznitman" | "bs" => LambdaMeasure::BolthausenSznitman,
                other => return Err(format!("unknown measure {other:?}").into()),
            };
            let threads = effective_threads(common.threads);
            let dir = cmd_simulate_coalescent(
                &cfg,
                k0,
                measure,
                threads,
                &out_root(common.out.as_deref()),
            )?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check {
            common,
            which,
            k,
            t,
            n_list,
            t_list,
            sde_replicates,
            min_observations,
            j,
        } => {
            let cfg = resolve(common.config.as_deref(), &common.overrides())?;
            let args = CheckArgs {
                which,
                k,
                t,
                n_list,
                t_list,
                sde_replicates,
                min_observations,
                j,
            };
            let threads = effective_threads(common.threads);
            let (dir, pass) = cmd_check(&cfg, &args, threads, &out_root(common.out.as_deref()))?;
            println!("{}", dir.display());
            println!("{}: {}", args_name(&dir), if pass { "PASS" } else { "FAIL" });
            Ok(if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn args_name(dir: &std::path::Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "check".to_string())
}
