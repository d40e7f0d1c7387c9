use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use empirical_wasserstein::concentration::{mc_deviation_tail, DeviationConfig};
use empirical_wasserstein::covering::{ellipsoid_entropy_lower, log_bar_n, EntropyConstants, RhoFunctional};
use empirical_wasserstein::exact_ot::{solve_wp, solve_wp_with, Solver};
use empirical_wasserstein::harness::{
    emit_report, exp_lower_bound_eps, run_lower_bound_experiment, run_rate_experiment, Estimator,
    LowerBoundConfig, RateExperimentConfig, RateModel, ReportFormat, Results,
};
use empirical_wasserstein::hierarchical::{greedy_tree, multiscale_transport, telescope_transport, BaseBall};
use empirical_wasserstein::measures::{empirical_measure, read_points_csv, write_points_csv, DiscreteMeasure};
use empirical_wasserstein::par::{configure_threads, Execution};
use empirical_wasserstein::samplers::{estimate_moment, fpc_moment_bound, Distribution, ScoreDist};
use empirical_wasserstein::Error;

/// Exact and multiscale Wasserstein distances, and Monte Carlo experiments on
/// empirical measures.
#[derive(Parser)]
#[command(name = "ewass", version)]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory for output files; relative `--out` paths resolve here.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact W_p between two measures (JSON, or CSV samples).
    Wp(WpArgs),
    /// Certified multiscale coupling of `mu` with `nuhat` on its atoms.
    Multiscale(MultiscaleArgs),
    /// Lower and upper bounds on the log covering number of a unit ball.
    Entropy(EntropyArgs),
    /// Draw samples and write them as CSV.
    Sample(SampleArgs),
    /// Deviation tail of W_p against the concentration bounds.
    Concentration(ConcentrationArgs),
    /// Mean W_p over a grid of sample sizes, with a rate fit.
    Rate(RateArgs),
    /// Packing lower-bound experiment.
    Lowerbound(LowerboundArgs),
}

#[derive(Args)]
struct WpArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// auto, assignment or network_simplex.
    #[arg(long, default_value = "auto")]
    solver: String,
}

#[derive(Args)]
struct MultiscaleArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nuhat: PathBuf,
    /// With a functional, layers `{2^(j-1) < rho <= 2^j}` are coupled
    /// separately; without one the enclosing ball of `mu` is used.
    #[arg(long)]
    rho: Option<RhoFunctional>,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Also solve exactly and check that the certificate dominates.
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    rho: RhoFunctional,
    #[arg(long)]
    eps: f64,
    /// Dimension, for the Euclidean ball.
    #[arg(long, default_value_t = 1)]
    dim: usize,
}

#[derive(Args)]
struct SampleArgs {
    /// uniform:d=.., gaussian:d=.., heavy:d=..,q=.., poly:b0=..[,c0=..,m=..],
    /// exp:gamma0=..[,c0=..,m=..].
    #[arg(long)]
    class: String,
    #[arg(long, default_value = "gaussian")]
    scores: ScoreDist,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Report the empirical q-th rho-moment (and the analytic bound when
    /// available).
    #[arg(long)]
    moment_q: Option<f64>,
    #[arg(long, default_value = "euclidean")]
    rho: RhoFunctional,
}

#[derive(Args)]
struct ConcentrationArgs {
    #[arg(long)]
    dist: String,
    #[arg(long, default_value = "gaussian")]
    scores: ScoreDist,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value = "tail.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    reference_size: usize,
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    /// Log-Sobolev constant; defaults to the known value for Gaussian laws.
    #[arg(long)]
    lsi: Option<f64>,
}

#[derive(Args)]
struct RateArgs {
    /// JSON file with the full experiment configuration; overrides the
    /// other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dist: Option<String>,
    #[arg(long, default_value = "gaussian")]
    scores: ScoreDist,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024, 2048])]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value = "power")]
    model: RateModel,
    /// Reference draw of `k n` points instead of a second `n`-sample.
    #[arg(long)]
    reference_multiplier: Option<usize>,
    #[arg(long, default_value_t = 60.0)]
    cell_budget: f64,
    /// Exit with status 2 when the fitted slope is further than this from
    /// the reference slope.
    #[arg(long)]
    slope_tolerance: Option<f64>,
    #[arg(long, default_value = "rate")]
    stem: String,
}

#[derive(Args)]
struct LowerboundArgs {
    #[arg(long, default_value = "exp:gamma=2")]
    rho: RhoFunctional,
    /// Packing separation; defaults to exp(-sqrt(2 ln gamma ln n)) for the
    /// exponential ellipsoid.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Dimension for the Euclidean ball.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 10_000_000)]
    draw_budget: u64,
    #[arg(long, default_value = "lowerbound")]
    stem: String,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    CheckFailed(String),
}

fn main() -> ExitCode {
    // Usage errors exit with 1; status 2 is reserved for failed checks.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.threads > 0 {
        configure_threads(cli.threads);
    }
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let out_path = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            cli.out_dir.join(p)
        }
    };
    match &cli.cmd {
        Cmd::Wp(a) => {
            let mu = load_measure(&a.mu)?;
            let nu = load_measure(&a.nu)?;
            let solver = parse_solver(&a.solver)?;
            let s = solve_wp_with(&mu, &nu, a.p, solver)?;
            print_json(&json!({
                "distance": s.distance,
                "edges": s.plan.edges.len(),
                "certificate": s.certificate,
            }));
            Ok(Outcome::Ok)
        }
        Cmd::Multiscale(a) => multiscale(a, exec),
        Cmd::Entropy(a) => {
            let upper_level = ((1.0 / a.eps).ln() / 3f64.ln()).ceil().max(1.0) as u32 - 1;
            let upper = log_bar_n(&a.rho, upper_level, a.dim, &EntropyConstants::default())?;
            let lower = match a.rho {
                RhoFunctional::Exp { gamma } => Some(ellipsoid_entropy_lower(gamma, a.eps)?),
                _ => None,
            };
            print_json(&json!({
                "rho": a.rho.to_string(),
                "eps": a.eps,
                "log_lower": lower,
                "log_upper": upper,
                "upper_radius": 3f64.powi(-(upper_level as i32 + 1)),
            }));
            Ok(Outcome::Ok)
        }
        Cmd::Sample(a) => {
            let dist = Distribution::parse(&a.class, a.scores)?;
            let pts = dist.sample(a.n, cli.seed, exec)?;
            let path = out_path(&a.out);
            ensure_parent(&path)?;
            write_points_csv(File::create(&path)?, &pts)?;
            let mut summary = json!({
                "distribution": dist.to_string(),
                "dim": dist.dim(),
                "n": a.n,
                "out": path.display().to_string(),
            });
            if let Distribution::Kl(spec) = dist {
                summary["relative_tail"] = json!(spec.relative_tail());
            }
            if let Some(q) = a.moment_q {
                let mut m = estimate_moment(&pts, &a.rho, q)?;
                if let Distribution::Kl(spec) = dist {
                    m.m_q_analytic = fpc_moment_bound(&spec, &a.rho, q, spec.scores.q_norm(q)).ok();
                }
                summary["moment"] = serde_json::to_value(m)?;
            }
            print_json(&summary);
            Ok(Outcome::Ok)
        }
        Cmd::Concentration(a) => {
            let dist = Distribution::parse(&a.dist, a.scores)?;
            let mut cfg = DeviationConfig::new(dist, a.n, a.p, a.reps, cli.seed);
            cfg.reference_size = a.reference_size;
            cfg.grid_points = a.grid_points;
            if a.lsi.is_some() {
                cfg.c_lsi = a.lsi;
            }
            let tail = mc_deviation_tail(&cfg, exec)?;
            let path = out_path(&a.out);
            let dir = path.parent().map_or_else(|| cli.out_dir.clone(), Path::to_path_buf);
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tail");
            let files = emit_report(Results::Tail(&tail), &[ReportFormat::Csv, ReportFormat::Json], &dir, stem)?;
            let violations = tail.violations(3.0);
            print_json(&json!({
                "mean_w": tail.mean,
                "orlicz_psi1": tail.orlicz_c,
                "violations": violations.len(),
                "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
            }));
            if violations.is_empty() {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailed(format!(
                    "empirical tail above the bound by more than 3 standard errors at {} grid points",
                    violations.len()
                )))
            }
        }
        Cmd::Rate(a) => {
            let cfg = match &a.config {
                Some(path) => {
                    let cfg: RateExperimentConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
                    cfg
                }
                None => {
                    let spec = a
                        .dist
                        .as_deref()
                        .ok_or_else(|| Error::InvalidParameter("rate needs --dist or --config".into()))?;
                    let dist = Distribution::parse(spec, a.scores)?;
                    let mut cfg = RateExperimentConfig::new(dist, a.p, a.n_grid.clone(), a.reps, cli.seed);
                    cfg.rate_model = a.model;
                    cfg.cell_budget_secs = Some(a.cell_budget);
                    if let Some(k) = a.reference_multiplier {
                        cfg.estimator = Estimator::Reference { multiplier: k };
                    }
                    cfg
                }
            };
            let fit = run_rate_experiment(&cfg, exec)?;
            let files = emit_report(
                Results::Rate(&fit),
                &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
                &cli.out_dir,
                &a.stem,
            )?;
            let slope = fit.slope();
            print_json(&json!({
                "model": fit.model.to_string(),
                "slope": slope,
                "slope_se": fit.fit.as_ref().map(|f| f.slope_se),
                "reference_slope": fit.reference_slope,
                "completed_cells": fit.completed().count(),
                "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
            }));
            match (a.slope_tolerance, slope, fit.reference_slope) {
                (Some(tol), Some(s), Some(r)) if (s - r).abs() > tol => Ok(Outcome::CheckFailed(format!(
                    "fitted slope {s} is more than {tol} from {r}"
                ))),
                (Some(_), None, _) => Ok(Outcome::CheckFailed("no fit: fewer than two cells completed".into())),
                _ => Ok(Outcome::Ok),
            }
        }
        Cmd::Lowerbound(a) => {
            let eps = match (a.eps, a.rho) {
                (Some(e), _) => e,
                (None, RhoFunctional::Exp { gamma }) => exp_lower_bound_eps(gamma, a.n),
                (None, _) => return Err(Error::InvalidParameter("--eps is required for this functional".into())),
            };
            let cfg = LowerBoundConfig {
                dim: a.dim,
                p: a.p,
                draw_budget: a.draw_budget,
                ..LowerBoundConfig::new(a.rho, eps, a.n, a.reps, cli.seed)
            };
            let r = run_lower_bound_experiment(&cfg, exec)?;
            let files = emit_report(
                Results::LowerBound(&r),
                &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
                &cli.out_dir,
                &a.stem,
            )?;
            print_json(&json!({
                "eps": r.eps,
                "packing_dim": r.packing_dim,
                "mean_kappa": r.mean_kappa,
                "kappa_se": r.kappa_se,
                "mean_w": r.mean_w,
                "min_ratio": r.min_ratio,
                "violations": r.violations,
                "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
            }));
            if r.violations == 0 {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailed(format!("{} replications below eps kappa^(1/p)", r.violations)))
            }
        }
    }
}

fn multiscale(a: &MultiscaleArgs, exec: Execution) -> Result<Outcome, Error> {
    let mu = load_measure(&a.mu)?;
    let nuhat = load_measure(&a.nuhat)?;
    let (plan, certified, extra) = match &a.rho {
        Some(rho) => {
            let t = telescope_transport(&mu, &nuhat, rho, a.depth, a.p, exec)?;
            let extra = json!({
                "layers": t.shared_mass.len(),
                "shared_mass": t.shared_mass,
                "layer_certified": t.layer_certified,
            });
            (t.plan, t.certified_cost, extra)
        }
        None => {
            let base = BaseBall::enclosing(&mu);
            let tree = greedy_tree(&mu, &base, a.depth)?;
            let m = multiscale_transport(&mu, &nuhat, &tree, a.p)?;
            let extra = json!({
                "cell_counts": tree.cell_counts(),
                "discrepancy_bound": m.discrepancy_bound,
                "level_discrepancy": m.level_discrepancy,
                "moved_mass": m.moved_mass,
            });
            (m.plan, m.certified_cost, extra)
        }
    };
    let certified_distance = certified.powf(1.0 / a.p);
    let mut out = json!({
        "edges": plan.edges.len(),
        "plan_cost": plan.total_cost_p,
        "plan_distance": plan.distance(),
        "certified_cost": certified,
        "certified_distance": certified_distance,
        "details": extra,
    });
    let mut outcome = Outcome::Ok;
    if a.exact {
        let exact = solve_wp(&mu, &nuhat, a.p)?.distance;
        out["exact_distance"] = json!(exact);
        if exact > certified_distance * (1.0 + 1e-9) + 1e-12 {
            outcome = Outcome::CheckFailed(format!("exact {exact} exceeds certified {certified_distance}"));
        }
    }
    print_json(&out);
    Ok(outcome)
}

fn parse_solver(s: &str) -> Result<Solver, Error> {
    match s {
        "auto" => Ok(Solver::Auto),
        "assignment" => Ok(Solver::Assignment),
        "network_simplex" | "simplex" => Ok(Solver::NetworkSimplex),
        o => Err(Error::InvalidParameter(format!("unknown solver '{o}'"))),
    }
}

/// JSON measures, or CSV samples read as an empirical measure.
fn load_measure(path: &Path) -> Result<DiscreteMeasure, Error> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        empirical_measure(&read_points_csv(BufReader::new(File::open(path)?))?)
    } else {
        DiscreteMeasure::load_json(path)
    }
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}
