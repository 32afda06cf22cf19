mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{DecomposeArgs, OpArgs};
use crate::config::RunConfig;

/// Worker-count override, read when `--workers` is absent.
const WORKERS_ENV: &str = "DYADIC_WORKERS";

#[derive(Parser)]
#[command(
    name = "dyadic",
    version,
    about = "Dyadic content, decompositions and singular maximal operators"
)]
struct Cli {
    /// Worker threads (default: DYADIC_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dyadic length, thickness or critical thickness of a grid function.
    Content {
        #[arg(long, value_parser = ["length", "thickness", "theta"])]
        op: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n: i32,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Length-halving split, its iteration, or the stopping-time decomposition.
    Decompose {
        #[arg(long, value_parser = ["split", "iterate", "stopping"])]
        method: String,
        /// Grid function, or a list of tagged bad pieces for `stopping`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n: i32,
        /// Number of iteration steps (default n).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        l: i64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        dil: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Calderón–Zygmund split over a nonisotropic Whitney decomposition.
    Czd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value = "[1,2]")]
        dil: String,
        #[arg(long, default_value_t = 0.2)]
        c: f64,
        #[arg(long, default_value = "czd.json")]
        out: PathBuf,
        /// Per-cell dump for plotting.
        #[arg(long)]
        cells_csv: Option<PathBuf>,
    },
    /// Apply an operator along a curve.
    Op {
        #[arg(long, value_parser = ["maximal", "radon", "average", "hilbert"])]
        kind: String,
        #[arg(long, default_value = "parabola:b=2")]
        surface: String,
        #[arg(long)]
        input: PathBuf,
        /// Scales as LO:HI.
        #[arg(long, allow_hyphen_values = true)]
        krange: Option<String>,
        #[arg(long, default_value = "[1,2]")]
        dil: String,
        /// Radius for `average`.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value = "field.json")]
        out: PathBuf,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Empirical experiments driven by a run config.
    Harness {
        #[arg(long, value_parser = ["weaktype", "convergence", "split-budget"])]
        suite: String,
        /// Run config JSON (defaults when absent).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "harness-out")]
        out_dir: PathBuf,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Only these criteria, comma separated.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn workers(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            Ok(Some(v.trim().parse().map_err(|_| {
                anyhow::anyhow!("{WORKERS_ENV}={v} is not a count")
            })?))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = workers(cli.workers)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Content {
            op,
            input,
            n,
            beta,
            out,
        } => commands::content(&op, &input, n, beta, out.as_deref())?,
        Command::Decompose {
            method,
            input,
            n,
            m,
            l,
            alpha,
            dil,
            out_dir,
        } => commands::decompose(&DecomposeArgs {
            method: &method,
            input: &input,
            n,
            m,
            l,
            alpha,
            dil: dil.as_deref(),
            out_dir: &out_dir,
        })?,
        Command::Czd {
            input,
            alpha,
            dil,
            c,
            out,
            cells_csv,
        } => commands::czd(&input, alpha, &dil, c, &out, cells_csv.as_deref())?,
        Command::Op {
            kind,
            surface,
            input,
            krange,
            dil,
            radius,
            out,
            diagnostics,
        } => commands::op(&OpArgs {
            kind: &kind,
            surface: &surface,
            input: &input,
            krange: krange.as_deref(),
            dil: &dil,
            radius,
            out: &out,
            diagnostics: diagnostics.as_deref(),
        })?,
        Command::Harness {
            suite,
            config,
            out_dir,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            commands::harness(&suite, &cfg, &out_dir)?
        }
        Command::Selftest { only, json } => return commands::selftest(&only, json.as_ref()),
    }
    Ok(true)
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
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(dyadic_core::Error::Invariant(_))));
            ExitCode::from(if invariant { 2 } else { 1 })
        }
    }
}
