//! Command-line front end: train policies, evaluate checkpoints on the
//! benchmark suite, generate reference trajectories and run ablation studies.
//!
//! Log verbosity comes from the QUADTRACK_LOG env var (error/warn/info/debug).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use quadtrack::bench::{export_traces, run_benchmark, SuiteConfig};
use quadtrack::ckpt::Checkpoint;
use quadtrack::config::RunConfig;
use quadtrack::traj::{write_csv, GeneratorSpec, TrajectoryKind};
use quadtrack::{ablate, ppo};

#[derive(Parser)]
#[command(name = "quadtrack", version, about = "Quadrotor trajectory-tracking RL laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tracking policy with PPO.
    Train {
        /// Run configuration (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints, metrics and the config snapshot.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint on the benchmark trajectory suite.
    Eval {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Optional suite configuration (TOML).
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Where to write per-trial traces and the summary (defaults next to
        /// the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a benchmark reference trajectory as CSV (+ JSON sidecar).
    GenTraj {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Samples per second.
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        /// Figure-eight lap period, s.
        #[arg(long)]
        period: Option<f64>,
        /// Figure-eight laps.
        #[arg(long)]
        laps: Option<usize>,
        /// Pentagram speed, m/s.
        #[arg(long)]
        speed: Option<f64>,
        /// Duration for random families, s.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train and compare the variants of one study factor (1..=5).
    Ablate {
        #[arg(long)]
        factor: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum KindArg {
    FigureEight,
    Polynomial,
    Pentagram,
    Zigzag,
}

impl From<KindArg> for TrajectoryKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::FigureEight => TrajectoryKind::FigureEight,
            KindArg::Polynomial => TrajectoryKind::Polynomial,
            KindArg::Pentagram => TrajectoryKind::Pentagram,
            KindArg::Zigzag => TrajectoryKind::Zigzag,
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> quadtrack::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run() -> quadtrack::Result<()> {
    match Cli::parse().command {
        Command::Train { config, out, seed, iterations } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = iterations {
                cfg.train.total_iterations = n;
            }
            let outcome = ppo::train(&cfg, &out)?;
            println!(
                "trained {} iterations ({} env steps); checkpoint at {}",
                outcome.iterations,
                outcome.env_steps,
                outcome.final_checkpoint.display()
            );
            if let Some(med) = outcome.last_eval_med {
                println!("last eval MED: {med:.4} m");
            }
        }
        Command::Eval { ckpt, suite, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let (policy, _) = checkpoint.restore_nets()?;
            let suite_cfg = match suite {
                Some(p) => SuiteConfig::load(&p)?,
                None => SuiteConfig::default(),
            };
            let (report, records) = run_benchmark(
                &policy,
                &checkpoint.meta.run_config,
                &suite_cfg,
                checkpoint.meta.iteration,
            )?;
            print!("{}", report.render_table());
            let out_dir = out.unwrap_or_else(|| {
                ckpt.parent().map(|p| p.join("eval")).unwrap_or_else(|| PathBuf::from("eval"))
            });
            export_traces(&report, &records, &out_dir)?;
            println!("traces and summary written to {}", out_dir.display());
        }
        Command::GenTraj { kind, seed, out, rate, period, laps, speed, duration } => {
            let spec = GeneratorSpec {
                kind: kind.into(),
                seed,
                period,
                speed,
                duration,
                laps,
            };
            let traj = spec.build()?;
            let file = std::fs::File::create(&out)?;
            write_csv(&traj, rate, file)?;
            let sidecar = out.with_extension("json");
            std::fs::write(
                &sidecar,
                serde_json::to_string_pretty(&spec)
                    .map_err(|e| quadtrack::Error::Io(std::io::Error::other(e)))?,
            )?;
            println!(
                "wrote {} ({} s at {} Hz) and {}",
                out.display(),
                traj.duration(),
                rate,
                sidecar.display()
            );
        }
        Command::Ablate { factor, config, out } => {
            let cfg = load_config(&config)?;
            let report = ablate::ablate(factor, &cfg, &out)?;
            print!("{}", report.render_table());
            println!("reports written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("QUADTRACK_LOG", "info"),
    )
    .format_timestamp_secs()
    .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
