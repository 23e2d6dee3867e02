use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metastorm::harness::{
    execute, parse_config, summarize, sweep_to_dir, verify, ExecOptions, RunConfig, VerifyFault, VerifyOptions,
};
use metastorm::{Error, Result};

/// Adaptive variance-reduced optimizers on synthetic problems.
#[derive(Debug, Parser)]
#[command(name = "metastorm", version)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Added to every seed in the config.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every n-th trace row (overrides the config).
    #[arg(long)]
    trace_every: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (eta, seed) pair of a config; write traces and summary.json.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a config at several horizons and fit the convergence slope.
    Sweep {
        config: PathBuf,
        /// Comma-separated horizons, e.g. 1000,10000,100000.
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the built-in verification suite.
    Verify {
        /// Inject a defect: misindexed-a or shifted-a.
        #[arg(long)]
        fault: Option<VerifyFault>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a run directory's summary against its traces and print a table.
    Summarize { dir: PathBuf },
}

fn load(path: &PathBuf, o: &Overrides) -> Result<RunConfig> {
    let mut config = parse_config(path)?.with_seed_offset(o.seed_offset);
    if let Some(out) = &o.out {
        config.output = out.clone();
    }
    if let Some(every) = o.trace_every {
        config.trace_every = every;
    }
    config.validate()?;
    Ok(config)
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4e}")
    } else {
        "-".into()
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let config = load(&config, &overrides)?;
            let summary = execute(
                &config,
                ExecOptions {
                    jobs: cli.jobs,
                    write_traces: true,
                },
            )?;
            for e in &summary.per_eta {
                println!(
                    "eta {:<10} |grad F(x_out)| {} ± {}  diverged {}/{}",
                    e.eta,
                    fmt_opt(e.grad_norm_out.mean),
                    fmt_opt(e.grad_norm_out.std),
                    e.diverged,
                    e.seeds
                );
            }
            match summary.best_eta {
                Some(b) => println!("best eta {b}"),
                None => println!("best eta: none (every eta diverged)"),
            }
            println!("wrote {}", config.output.display());
        }
        Command::Sweep {
            config,
            horizons,
            overrides,
        } => {
            let config = load(&config, &overrides)?;
            let report = sweep_to_dir(&config, &horizons, cli.jobs)?;
            for curve in &report.curves {
                for p in &curve.points {
                    println!(
                        "eta {:<10} T {:<9} |grad F(x_out)| {} ± {}",
                        curve.eta,
                        p.big_t,
                        fmt_opt(p.grad_norm_out.mean),
                        fmt_opt(p.grad_norm_out.std)
                    );
                }
                match curve.fit {
                    Some(f) => println!("eta {:<10} slope {:.4} r2 {:.4}", curve.eta, f.slope, f.r2),
                    None => println!("eta {:<10} slope: not fittable", curve.eta),
                }
            }
        }
        Command::Verify { fault, seed } => {
            let report = verify(&VerifyOptions {
                seed,
                fault,
                jobs: cli.jobs,
                ..VerifyOptions::default()
            })?;
            for c in &report.checks {
                println!("{c}");
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", report.checks.len());
            report.into_result()?;
        }
        Command::Summarize { dir } => {
            let s = summarize(&dir)?;
            print!("{}", s.table);
            println!("{} runs consistent with their traces", s.runs_checked);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(list) | Error::Verification(list) if list.len() > 1 => {
                    eprintln!("error:");
                    for item in list {
                        eprintln!("  {item}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
