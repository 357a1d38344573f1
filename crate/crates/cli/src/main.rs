use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tdgf::archive::SolutionArchive;
use tdgf::config::{GridSpec, RunConfig};
use tdgf::gradcheck::{run_gradcheck, Fault, GradcheckConfig};
use tdgf::report::{evaluate_solution, fmt_f64, EvaluationGrid, ReferencePricer};
use tdgf::solver::{configure_workers, resume, Observer, StageRecord, StepDiagnostics};
use tdgf::{Error, Result};

/// Option pricing by time-stepping deep gradient flow.
///
/// Exit status: 0 on success, 2 on a configuration or usage error, 3 on a
/// numeric failure, 1 otherwise. TDGF_WORKERS sets the worker count.
#[derive(Parser)]
#[command(name = "tdgf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every time step, resuming an existing archive of the same run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Archive directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained archive on a grid.
    Price {
        archive: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference prices for a configuration.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error report of a trained archive against the reference pricer.
    Compare {
        archive: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Error CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the price table here.
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Check training gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        /// JSON report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupts the engine gradient so the check must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Moneyness grid as lo:hi:points.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated times to maturity; each must be a grid time.
    #[arg(long)]
    times: Option<String>,
}

impl GridArgs {
    fn apply(&self, grid: &mut EvaluationGrid) -> Result<()> {
        if let Some(g) = &self.grid {
            grid.moneyness = GridSpec::parse(g)?.values();
        }
        if let Some(t) = &self.times {
            grid.times = parse_times(t)?;
        }
        Ok(())
    }
}

fn parse_times(s: &str) -> Result<Vec<f64>> {
    let times = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|t| t.is_finite() && *t >= 0.0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config(format!("times must be a comma-separated list of non-negative numbers, got {s:?}")))?;
    if times.is_empty() {
        return Err(Error::Config("empty time list".into()));
    }
    Ok(times)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// JSON progress lines on stderr.
struct Progress;

impl Observer for Progress {
    fn stage(&mut self, r: &StageRecord) {
        eprintln!("{}", json!({"event": "stage", "step": r.step, "stage": r.stage, "loss": r.loss}));
    }

    fn step(&mut self, d: &StepDiagnostics) {
        eprintln!(
            "{}",
            json!({
                "event": "step",
                "step": d.step,
                "initial_loss": d.initial_loss,
                "final_loss": d.final_loss,
                "skipped_stages": d.skipped_stages,
                "seconds": d.seconds,
            })
        );
    }
}

fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let problem = cfg.problem()?;
    let mut archive = SolutionArchive::create(out, &problem)?;
    let done = archive.load()?;
    if !done.steps.is_empty() {
        eprintln!("{}", json!({"event": "resume", "completed_steps": done.steps.len()}));
    }
    let sol = resume(&problem, done.steps, done.diagnostics, &mut Progress, |k, theta, diag| {
        archive.append_step(k, theta, diag)
    })?;
    let last = sol.diagnostics.last();
    println!(
        "{}",
        json!({
            "archive": out.display().to_string(),
            "steps": sol.steps.len(),
            "final_loss": last.map(|d| d.final_loss),
        })
    );
    Ok(())
}

fn price(archive: &Path, grid_args: &GridArgs, out: Option<&Path>) -> Result<()> {
    let sol = SolutionArchive::open(archive)?.load_complete()?;
    let mut grid = EvaluationGrid::standard(&sol.problem);
    grid_args.apply(&mut grid)?;
    let mut w = sink(out)?;
    writeln!(w, "time,moneyness,price")?;
    for &t in &grid.times {
        let p = ReferencePricer::prices(&sol, t, &grid)?;
        for (x, v) in grid.moneyness.iter().zip(p) {
            writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(*x), fmt_f64(v))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn reference(config: &Path, grid_args: &GridArgs, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let problem = cfg.problem()?;
    let mut grid = cfg.evaluation_grid(&problem)?;
    grid_args.apply(&mut grid)?;
    let pricer = cfg.reference()?;
    let mut w = sink(out)?;
    writeln!(w, "time,moneyness,price_ref")?;
    for &t in &grid.times {
        for (x, v) in grid.moneyness.iter().zip(pricer.prices(t, &grid)?) {
            writeln!(w, "{},{},{}", fmt_f64(t), fmt_f64(*x), fmt_f64(v))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn compare(archive: &Path, config: &Path, grid_args: &GridArgs, out: Option<&Path>, prices: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let sol = SolutionArchive::open(archive)?.load()?;
    if sol.problem.model != cfg.model {
        return Err(Error::Config(format!(
            "{} was trained on a different model than {}",
            archive.display(),
            config.display()
        )));
    }
    let mut grid = cfg.evaluation_grid(&sol.problem)?;
    grid_args.apply(&mut grid)?;
    let report = evaluate_solution(&sol, &grid, cfg.reference()?.as_ref())?;
    if let Some(p) = prices {
        let mut w = sink(Some(p))?;
        report.write_prices_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = sink(out)?;
    report.write_errors_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn gradcheck(seed: u64, cases: usize, out: Option<&Path>, inject_fault: bool) -> Result<bool> {
    let cfg = GradcheckConfig {
        seed,
        cases,
        fault: inject_fault.then_some(Fault::OutputWeights { relative: 1e-3 }),
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_workers()?;
    match cli.command {
        Command::Train { config, out, seed } => train(&config, &out, seed)?,
        Command::Price { archive, grid, out } => price(&archive, &grid, out.as_deref())?,
        Command::Reference { config, grid, out } => reference(&config, &grid, out.as_deref())?,
        Command::Compare {
            archive,
            config,
            grid,
            out,
            prices,
        } => compare(&archive, &config, &grid, out.as_deref(), prices.as_deref())?,
        Command::Gradcheck {
            seed,
            cases,
            out,
            inject_fault,
        } => {
            if !gradcheck(seed, cases, out.as_deref(), inject_fault)? {
                eprintln!("tdgf: gradient check failed");
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("tdgf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
