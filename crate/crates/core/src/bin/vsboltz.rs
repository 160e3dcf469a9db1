use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vsboltz::harness::{error_exit_code, run, ExperimentConfig, ExperimentKind};

/// Verification laboratory for the non-cutoff Boltzmann operator with very soft potentials.
#[derive(Parser)]
#[command(name = "vsboltz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `corpus.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run inequality and identity suites over the seeded corpus.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite names, or `all`; overrides the config's `verify` list.
        suites: Vec<String>,
    },
    /// Evolve a two-Maxwellian state and check the a-priori estimates.
    Evolve(Common),
    /// Run a perturbed twin and check the stability cone.
    Stability(Common),
    /// Sweep one config key and repeat the base experiment per value.
    Scan(Common),
    /// Compare fast evaluators against independent reference quadratures.
    Oracle(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, suites) = match cli.command {
        Command::Verify { common, suites } => (ExperimentKind::Verify, common, Some(suites)),
        Command::Evolve(c) => (ExperimentKind::Evolve, c, None),
        Command::Stability(c) => (ExperimentKind::Stability, c, None),
        Command::Scan(c) => (ExperimentKind::Scan, c, None),
        Command::Oracle(c) => (ExperimentKind::Oracle, c, None),
    };
    let outcome = (|| {
        let mut config = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.corpus.seed = seed;
        }
        if let Some(s) = suites.filter(|s| !s.is_empty()) {
            config.verify = s;
        }
        run(kind, &config, &common.out, common.jobs)
    })();
    match outcome {
        Ok(o) => {
            let c = &o.manifest.counts;
            println!("{}: {} passed, {} failed, {} skipped ({:.1} s) -> {}", kind.tag(), c.pass, c.fail, c.skipped, o.manifest.wall_clock_seconds, common.out.display());
            for r in o.records.iter().filter(|r| r.status == vsboltz::harness::Status::Fail) {
                println!("FAIL {}", r.id);
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
