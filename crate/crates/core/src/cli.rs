//! Command-line front end. Every subcommand writes deterministic JSON/CSV
//! into the output directory; reruns with the same config and seed produce
//! identical files.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::controls::lp_norm;
use crate::error::{Error, Result};
use crate::operator::TrajectoryGrid;
use crate::reachset::{
    compactness_diagnostic, convolution_compactness_check, counterexample_report, field_values,
    gamma_approximation,
};
use crate::solver::solve_batch;
use crate::spaces::Semigroup;

/// Environment variable that takes precedence over `--out`.
pub const OUT_ENV: &str = "MILDSOLVE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "mildsolve",
    version,
    about = "Certified Picard solver and reachable-set compactness diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "INT")]
    pub threads: Option<usize>,
    /// Output directory; MILDSOLVE_OUT takes precedence.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Issue the contraction certificate for the configured control ball.
    Certify,
    /// Solve the configured system for the configured control(s).
    Solve,
    /// Covering-number table of reachable sets against the ambient ball.
    Reachset,
    /// Dyadic spike family report.
    Counterexample,
    /// Piecewise-constant semigroup tables and the reconstruction check.
    Gamma,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Solve => "solve",
            Command::Reachset => "reachset",
            Command::Counterexample => "counterexample",
            Command::Gamma => "gamma",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env_out = std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    match execute(&cli, env_out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; `env_out` plays the role of MILDSOLVE_OUT.
pub fn execute(cli: &Cli, env_out: Option<PathBuf>) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if matches!(cli.command, Command::Certify | Command::Solve) => {
            return Err(Error::Config(format!(
                "`{}` needs --config",
                cli.command.name()
            )));
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out = env_out
        .or_else(|| cli.out.clone())
        .or_else(|| cfg.out.as_ref().map(|o| cfg.base_dir.join(o)))
        .unwrap_or_else(|| PathBuf::from("."));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    // Validate before touching the output directory.
    match cli.command {
        Command::Certify | Command::Solve => {}
        Command::Reachset => cfg.validate_diagnostic()?,
        Command::Counterexample => cfg.validate_counterexample()?,
        Command::Gamma => cfg.validate_gamma()?,
    }
    let ctx = Context {
        out,
        metadata: json!({
            "command": cli.command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cli.seed,
        }),
    };
    pool.install(|| match cli.command {
        Command::Certify => cmd_certify(&cfg, &ctx),
        Command::Solve => cmd_solve(&cfg, &ctx),
        Command::Reachset => cmd_reachset(&cfg, &ctx),
        Command::Counterexample => cmd_counterexample(&cfg, &ctx),
        Command::Gamma => cmd_gamma(&cfg, &ctx),
    })
}

struct Context {
    out: PathBuf,
    metadata: serde_json::Value,
}

impl Context {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `value` with a `metadata` key added at the top level.
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("metadata".into(), self.metadata.clone());
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn cmd_certify(cfg: &RunConfig, ctx: &Context) -> Result<()> {
    let prep = cfg.prepare()?;
    ctx.write_json("certificate.json", &prep.certificate)?;
    println!("{}", serde_json::to_string(&prep.certificate)?);
    Ok(())
}

fn write_trajectory(path: &Path, x: &TrajectoryGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..x.dim()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for j in 0..x.len() {
        let mut row = vec![x.time(j).to_string()];
        row.extend(x.state(j).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SolveRun {
    index: usize,
    trajectory: String,
    control_norm: f64,
    iterations: usize,
    a_posteriori_bound: f64,
    iterate_gaps: Vec<f64>,
}

fn cmd_solve(cfg: &RunConfig, ctx: &Context) -> Result<()> {
    let prep = cfg.prepare()?;
    let controls = cfg.solve_controls(&prep)?;
    let results = solve_batch(&prep.operator, &controls, &prep.certificate, &prep.options)?;
    let single = results.len() == 1;
    let mut runs = Vec::with_capacity(results.len());
    for (index, (res, u)) in results.iter().zip(&controls).enumerate() {
        let name = if single {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{index:04}.csv")
        };
        std::fs::create_dir_all(&ctx.out)?;
        write_trajectory(&ctx.path(&name), &res.trajectory)?;
        runs.push(SolveRun {
            index,
            trajectory: name,
            control_norm: lp_norm(u, prep.certificate.p)?,
            iterations: res.iterations,
            a_posteriori_bound: res.a_posteriori_bound,
            iterate_gaps: res.iterate_gaps.clone(),
        });
    }
    let initial_guess = results.first().map(|r| r.initial_guess);
    ctx.write_json(
        "solve.json",
        &json!({ "certificate": prep.certificate, "initial_guess": initial_guess, "runs": runs }),
    )?;
    for r in &runs {
        println!(
            "{}: {} iterations, a-posteriori bound {:.3e}",
            r.trajectory, r.iterations, r.a_posteriori_bound
        );
    }
    Ok(())
}

fn cmd_reachset(cfg: &RunConfig, ctx: &Context) -> Result<()> {
    let report = compactness_diagnostic(&cfg.diagnostic)?;
    report.write_csv(ctx.create("reachset.csv")?)?;
    ctx.write_json(
        "reachset.json",
        &json!({ "config": cfg.diagnostic, "dimensions": report.dimensions }),
    )?;
    println!("n,epsilon,n_reach,n_ball");
    for r in &report.rows {
        println!("{},{},{},{}", r.n, r.epsilon, r.n_reach, r.n_ball);
    }
    Ok(())
}

fn cmd_counterexample(cfg: &RunConfig, ctx: &Context) -> Result<()> {
    let c = &cfg.counterexample;
    let report = counterexample_report(c.n_max, c.steps)?;
    ctx.write_json("counterexample.json", &report)?;
    println!(
        "family {:?}: closed-form error {:.2e}, 0.5-packing {}, 0.25-cover {} (bound {})",
        report.family,
        report.max_closed_form_error,
        report.packing_half,
        report.covering_quarter,
        report.covering_bound
    );
    Ok(())
}

fn cmd_gamma(cfg: &RunConfig, ctx: &Context) -> Result<()> {
    let g = &cfg.gamma;
    let (op, sample) = cfg.diagnostic.sample(g.dim)?;
    let cloud = field_values(&op, &sample)?;
    let sg = Semigroup::heat(g.dim)?;
    let horizon = cfg.diagnostic.horizon;
    let mut tables = Vec::new();
    let mut checks = Vec::new();
    for &eps in &g.epsilons {
        let table = gamma_approximation(&sg, &cloud, horizon, eps)?;
        println!(
            "epsilon {eps}: {} time cells x {} state cells, dense error {:.3e}",
            table.time_cells,
            table.centers.len(),
            table.verified_error
        );
        tables.push(table);
        if g.convolution {
            let half = gamma_approximation(&sg, &cloud, horizon, eps / 2.0)?;
            let report = convolution_compactness_check(&op, &sample, &half)?;
            println!(
                "epsilon {eps}: reconstruction error {:.3e} (bound {:.3e}), max |lambda|/|u|_1 {:.3}",
                report.max_error, report.error_bound, report.max_coefficient_ratio
            );
            checks.push(json!({ "epsilon": eps, "report": report }));
        }
    }
    ctx.write_json(
        "gamma.json",
        &json!({ "dim": g.dim, "cloud_size": cloud.len(), "tables": tables, "convolution": checks }),
    )?;
    if let Some(bad) = checks
        .iter()
        .find(|c| c["report"]["passed"] == json!(false))
    {
        return Err(Error::Verification(format!(
            "reconstruction check failed at epsilon {}",
            bad["epsilon"]
        )));
    }
    Ok(())
}
