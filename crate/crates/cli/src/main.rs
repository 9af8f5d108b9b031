use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phisd::harness::{self, ExperimentConfig, Overrides, METRIC_KINDS, PROBLEM_KINDS};

#[derive(Parser)]
#[command(name = "phisd", version, about = "Preconditioned high-index saddle dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every config listed in a manifest and print a comparison table.
    Suite {
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Derivative checks and metric probes for a config, without solving.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Number of check points (the start plus perturbed copies).
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// List problem kinds.
    ListProblems,
    /// List metric kinds.
    ListMetrics,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, max_iters: self.max_iters, out: self.out.clone() }
    }
}

fn run(config: &Path, common: &Common) -> Result<i32, phisd::Error> {
    let outcome = harness::run_config_file(config, &common.overrides())?;
    if !common.quiet {
        let s = &outcome.summary;
        let rate = s.rate.map_or_else(|| "none".to_string(), |q| format!("{q:.4}"));
        println!("{}: {} after {} iterations, |g| = {:.3e}, rate {rate}", s.name, s.status, s.iterations, s.final_grad_norm);
        if let Some(m) = s.switch_iteration {
            println!("  stage switch at iteration {m}");
        }
        println!("  wrote {}", outcome.config.output_dir().display());
    }
    Ok(outcome.status().exit_code())
}

fn suite(manifest: &Path, common: &Common) -> Result<i32, phisd::Error> {
    let report = harness::run_suite(manifest, &common.overrides())?;
    print!("{}", report.table());
    for row in &report.rows {
        if let Some(e) = &row.error {
            eprintln!("{}: {e}", row.config);
        }
    }
    Ok(report.exit_code())
}

fn verify(config: &Path, common: &Common, points: usize) -> Result<i32, phisd::Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    common.overrides().apply(&mut cfg);
    let report = harness::verify(&cfg, config.parent().unwrap_or(Path::new(".")), points)?;
    if !common.quiet {
        for (i, d) in report.derivatives.iter().enumerate() {
            let mark = if d.passed() { "ok" } else { "FAIL" };
            println!("point {i:>3}: gradient {:.2e}, hessian {:.2e} {mark}", d.gradient_error, d.hessian_error);
            if let Some(f) = &d.failure {
                println!("           {f}");
            }
        }
        for (stage, m) in &report.metrics {
            match m {
                Ok(r) => println!("metric stage {stage}: round-trip {r:.2e}"),
                Err(e) => println!("metric stage {stage}: {e}"),
            }
        }
    }
    println!("{}", if report.passed() { "verify: pass" } else { "verify: FAIL" });
    Ok(if report.passed() { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => run(config, common),
        Command::Suite { manifest, common } => suite(manifest, common),
        Command::Verify { config, common, points } => verify(config, common, *points),
        Command::ListProblems => {
            PROBLEM_KINDS.iter().for_each(|(k, d)| println!("{k:<18} {d}"));
            Ok(0)
        }
        Command::ListMetrics => {
            METRIC_KINDS.iter().for_each(|(k, d)| println!("{k:<18} {d}"));
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
