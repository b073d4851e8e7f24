use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nia::experiment::{cmd_generate, cmd_run, cmd_scan, cmd_verify, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "nia", version, about = "Logit-passing protocol experiments on agent DAGs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write hard-instance datasets and JSON sidecars.
    Generate(Common),
    /// Run the protocol once per seed and report excess loss and bounds.
    Run(Common),
    /// Sweep path depths / pass counts and emit scaling CSVs.
    Scan(Common),
    /// Run the verification suites; exits nonzero if any suite fails.
    Verify(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for seed replicates.
    #[arg(long, env = "NIA_THREADS")]
    threads: Option<usize>,
}

impl Common {
    fn load(&self, verify: bool) -> nia::Result<ExperimentConfig> {
        let mut config = match (&self.config, verify) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, true) => ExperimentConfig::verify_default(),
            (None, false) => {
                return Err(nia::Error::InvalidConfig("--config is required".into()));
            }
        };
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.override_seed(seed);
        }
        if let Some(threads) = self.threads {
            config.replicates = threads;
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| nia::Error::InvalidConfig(e.to_string()))?;
        }
        Ok(config)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

fn execute(cli: Cli) -> nia::Result<bool> {
    match cli.command {
        Command::Generate(args) => {
            let config = args.load(false)?;
            for ds in cmd_generate(&config)? {
                println!("{}  sha256={}", ds.file.display(), ds.sha256);
            }
        }
        Command::Run(args) => {
            let config = args.load(false)?;
            for r in cmd_run(&config)? {
                let coverage = r
                    .coverage
                    .as_ref()
                    .map_or("n/a".to_string(), |c| format!("M={} covered={}", c.m, c.coverage.covered));
                println!(
                    "{}: excess={:.6e} bound={} coverage[{}] converged={}",
                    r.tag,
                    r.excess,
                    fmt_opt(r.theory.map(|t| t.rhs_convergence_bound)),
                    coverage,
                    r.all_converged
                );
            }
        }
        Command::Scan(args) => {
            let config = args.load(false)?;
            let rows = cmd_scan(&config)?;
            for p in nia::experiment::aggregate_scan(&rows) {
                println!(
                    "D={:4} M={} p={:2} seeds={} excess={:.6e} se={:.2e} upper={} shape={}",
                    p.depth,
                    p.m,
                    p.p,
                    p.seeds,
                    p.mean_excess,
                    p.std_error,
                    fmt_opt(p.mean_upper_bound),
                    fmt_opt(p.lower_shape)
                );
            }
            let failed = rows.iter().filter(|r| !r.errors.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} scan rows recorded errors");
            }
        }
        Command::Verify(args) => {
            let config = args.load(true)?;
            let report = cmd_verify(&config)?;
            for s in &report.suites {
                println!(
                    "[{}] {:24} metric={:.3e} threshold={:.1e}  {}",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.metric,
                    s.threshold,
                    s.detail
                );
            }
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
