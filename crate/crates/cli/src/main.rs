use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nlmc_cli::report::{write_json, ERROR_FILE, REPORT_FILE};
use nlmc_cli::{parse_spec, run, Command, RunError, RunReport, EXIT_OPERATIONAL};

/// Verify the hypotheses and conclusions of the CLT for a nonlinear Markov chain.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    command: Command,
    /// Chain spec file (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for the report and tables
    #[arg(long, env = "NLMC_OUT_DIR", default_value = "nlmc-out")]
    out: PathBuf,
    /// Master seed, overriding the spec
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Trajectory length, overriding the spec
    #[arg(long)]
    n: Option<usize>,
    /// Number of trajectories, overriding the spec
    #[arg(long)]
    m: Option<usize>,
}

fn execute(cli: &Cli) -> Result<RunReport, RunError> {
    let mut spec = parse_spec(&cli.spec)?;
    if let Some(seed) = cli.seed {
        spec.run.seed = seed;
    }
    if let Some(n) = cli.n {
        spec.run.n = n;
    }
    if let Some(m) = cli.m {
        spec.run.m = m;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| RunError::Usage(e.to_string()))?;
    pool.install(|| run(cli.command, &spec, &cli.out))
}

fn fail(err: &RunError, out: Option<&PathBuf>) -> ExitCode {
    let object = err.to_json();
    eprintln!("{object}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join(ERROR_FILE), &object);
        }
    }
    ExitCode::from(EXIT_OPERATIONAL as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(
                &RunError::Usage(e.kind().to_string() + ": " + &e.render().to_string()),
                None,
            )
        }
    };
    match execute(&cli) {
        Ok(report) => {
            for (name, ok) in report.verdict.hypotheses.iter().chain(&report.verdict.conclusions) {
                println!("{:<20} {}", name, if *ok { "pass" } else { "FAIL" });
            }
            println!("report: {}", cli.out.join(REPORT_FILE).display());
            ExitCode::from(report.verdict.exit_code as u8)
        }
        Err(e) => fail(&e, Some(&cli.out)),
    }
}
