use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phlearn::Error;
use phlearn_cli::commands;
use phlearn_cli::config::{parse_config, Experiment, ExperimentConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

/// Learn port-Hamiltonian models from trajectories.
#[derive(Parser, Debug)]
#[command(name = "phlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML), or the name of a built-in experiment:
    /// pendulum, swarm, msd-demo, rlc-demo, sparse-toy.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<String>,

    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Parameter file: the starting point for `train`, the model for
    /// `eval` and `potential` (default `<out>/params.toml`).
    #[arg(long, global = true, value_name = "PATH")]
    params: Option<PathBuf>,

    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate the ground truth and write training trajectories.
    Generate,
    /// Fit the model to the training trajectories.
    Train,
    /// Per-trajectory MSE on fresh initial conditions.
    Eval,
    /// Learned versus reference pair force of a swarm model.
    Potential,
    /// Gradient cost over particle count, method and horizon.
    Bench,
}

fn load_config(cli: &Cli) -> phlearn::Result<ExperimentConfig> {
    let Some(src) = &cli.config else {
        return Err(Error::Config {
            field: "config".into(),
            reason: "`--config` is required".into(),
        });
    };
    let mut cfg = if let Ok(e) = src.parse::<Experiment>() {
        ExperimentConfig::default_for(e)
    } else {
        let text = fs::read_to_string(src).map_err(|e| Error::Config {
            field: "config".into(),
            reason: format!("cannot read `{src}`: {e}"),
        })?;
        parse_config(&text)?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> phlearn::Result<()> {
    let cfg = load_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let params = cli.params.as_deref();
    match cli.command {
        Command::Generate => {
            let m = commands::generate(&cfg)?;
            println!("wrote {} trajectories to {}", m.files.len(), cfg.data_dir().display());
        }
        Command::Train => {
            let (_, report) = commands::train(&cfg, params)?;
            println!(
                "iterations {} final J {:.6e} final R {:.6e} ({:.3} ms/iter)",
                report.iterations,
                report.final_j,
                report.final_r,
                report.mean_wall_ms()
            );
        }
        Command::Eval => {
            let s = commands::eval(&cfg, params)?;
            println!("{} initial conditions, mean MSE {:.6e}, std {:.6e}", s.mse.len(), s.mean, s.std);
        }
        Command::Potential => {
            let path = commands::potential(&cfg, params)?;
            println!("wrote {}", path.display());
        }
        Command::Bench => {
            let (_, rows) = commands::bench(&cfg, 2)?;
            println!("particles method horizon rhs_evals wall_ms");
            for r in rows {
                println!("{} {:?} {} {} {:.3}", r.particles, r.method, r.horizon, r.rhs_evals, r.wall_ms);
            }
        }
    }
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("PHLEARN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_threads();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                if let Error::Diverged { .. } = e {
                    eprintln!("last finite parameters saved in the output directory");
                }
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_USAGE)
            }
        }
    }
}
