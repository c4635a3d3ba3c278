use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gradqvi_cli::commands::{self, Replay, EXIT_FAILURE};
use gradqvi_cli::config::{load_config, RunConfig};

#[derive(Parser)]
#[command(name = "gradqvi", version, about = "Evolution QVI solver with gradient constraints")]
struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Turn failed assumption checks into errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `[output].seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `[output].directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write snapshots, series and manifest.
    Run,
    /// Run once per value of one parameter and tabulate the scaling.
    Sweep {
        /// delta, eps_min, n or dt_init.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Long-time solve toward the stationary problem.
    Steady,
    /// Recompute the diagnostics of a run directory and compare.
    Diagnose {
        /// Run directory holding a manifest.
        dir: PathBuf,
    },
    /// Evaluate an expression, e.g. `eval-expr "x*t" x=2 t=0.25`.
    EvalExpr { expression: String, bindings: Vec<String> },
    /// Print the normalized config.
    ShowConfig,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let (cfg, warnings) = load_config(path, cli.strict)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.output.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::EvalExpr { expression, bindings } => {
            println!("{}", commands::cmd_eval_expr(expression, bindings)?);
            Ok(0)
        }
        Command::Diagnose { dir } => match commands::cmd_diagnose(dir)? {
            Replay::Match => {
                println!("MATCH");
                Ok(0)
            }
            Replay::Mismatch(names) => {
                println!("MISMATCH: {}", names.join(", "));
                Ok(EXIT_FAILURE)
            }
        },
        Command::ShowConfig => {
            print!("{}", config(cli)?.to_canonical());
            Ok(0)
        }
        Command::Run => {
            let cfg = config(cli)?;
            let dir = PathBuf::from(&cfg.output.directory);
            let out = commands::cmd_run(&cfg, &dir)?;
            let m = &out.manifest;
            match &m.error {
                Some(err) => eprintln!("error: {err}"),
                None => println!("{} ({} stages) -> {}", m.status, m.stages.len(), dir.display()),
            }
            if let Some(report) = &m.report {
                print!("{report}");
            }
            Ok(out.exit_code)
        }
        Command::Sweep { axis, values } => {
            let cfg = config(cli)?;
            let axis = axis.parse()?;
            let values = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().with_context(|| format!("sweep value `{v}`")))
                .collect::<Result<Vec<_>>>()?;
            let dir = PathBuf::from(&cfg.output.directory);
            let (code, rows) = commands::cmd_sweep(&cfg, axis, &values, &dir)?;
            print!("{}", commands::sweep_table(&rows));
            println!(
                "spread penalty_mass*delta^2 = {:.3}, grad_l2*delta^2 = {:.3}, grad_l4*delta^2 = {:.3}",
                commands::spread(rows.iter().map(|r| r.penalty_mass_scaled())),
                commands::spread(rows.iter().map(|r| r.grad_scaled(2))),
                commands::spread(rows.iter().map(|r| r.grad_scaled(4))),
            );
            Ok(code)
        }
        Command::Steady => {
            let cfg = config(cli)?;
            let dir = PathBuf::from(&cfg.output.directory);
            let (code, m) = commands::cmd_steady(&cfg, &dir)?;
            match &m.error {
                Some(err) => eprintln!("error: {err}"),
                None => {
                    println!("{} ({} stages) -> {}", m.status, m.stages.len(), dir.display());
                    for (k, v) in &m.fits {
                        println!("{k} = {v}");
                    }
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which here means "target missed"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let usage = err.use_stderr();
            let _ = err.print();
            return ExitCode::from(if usage { EXIT_FAILURE as u8 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
