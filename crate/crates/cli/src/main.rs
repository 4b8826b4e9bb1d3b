use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnest::model::{catalog, CATALOG_NAMES};
use rnest::runio::{self, RunConfig, RunStatus, SamplerKind};
use rnest::Error;

/// Reactive nested sampling on the built-in test problems.
#[derive(Parser)]
#[command(name = "rnest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a nested-sampling run.
    Run {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 400)]
        n_live: usize,
        /// Upper bound on the live width; defaults to --n-live (no widening).
        #[arg(long)]
        max_width: Option<usize>,
        #[arg(long, default_value_t = rnest::nscore::DEFAULT_FRAC)]
        frac: f64,
        #[arg(long, default_value_t = rnest::integrate::DEFAULT_K)]
        k_bootstrap: usize,
        /// region, slice, hitandrun or auto.
        #[arg(long, default_value = "region")]
        sampler: String,
        /// Random-walk length for step samplers (default 2 x dimension).
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Re-run the insertion-rank test on a stored checkpoint.
    Diagnose {
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in problems.
    Problems,
}

const EXIT_USAGE: u8 = 2;
const EXIT_RUN_ERROR: u8 = 3;

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Usage(_) => ExitCode::from(EXIT_USAGE),
        _ => ExitCode::from(EXIT_RUN_ERROR),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Problems => {
            for name in CATALOG_NAMES {
                let p = catalog(name).expect("catalog names resolve");
                let reference = p.ref_logz().map_or("-".to_string(), |z| format!("{z:.6}"));
                println!("{name}\tdim={}\tref_logz={reference}", p.dim());
            }
            ExitCode::SUCCESS
        }
        Command::Diagnose { out } => match runio::diagnose(&out) {
            Ok(d) => {
                match (d.statistic, d.p_value) {
                    (Some(s), Some(p)) => println!("ranks={} ks={s:.6} p={p:.6}", d.n_ranks),
                    _ => println!("ranks={} {}", d.n_ranks, d.status),
                }
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::Run { problem, n_live, max_width, frac, k_bootstrap, sampler, n_steps, seed, out, resume, quiet } => {
            let sampler = match SamplerKind::parse(&sampler) {
                Ok(s) => s,
                Err(e) => return exit_for(&e),
            };
            let mut config = RunConfig::new(problem, n_live, seed, out);
            config.max_width = max_width.unwrap_or(n_live);
            config.frac = frac;
            config.k_bootstrap = k_bootstrap;
            config.sampler = sampler;
            config.n_steps = n_steps;
            config.resume = resume;
            config.progress = !quiet;
            match runio::run(&config) {
                Ok(r) => {
                    println!(
                        "logz = {:.4} +- {:.4}  ess = {:.1}  samples = {}  ({})",
                        r.logz, r.logz_sigma, r.ess, r.n_samples, r.reason
                    );
                    if r.status == RunStatus::Completed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_RUN_ERROR)
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
