//! Experiment driver: Monte Carlo estimates of `E W_p`, rate fits on
//! transformed axes, the packing lower-bound experiment, and CSV/JSON/SVG
//! output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concentration::DeviationTail;
use crate::covering::{greedy_packing_ellipsoid, RhoFunctional, DEFAULT_DRAW_BUDGET};
use crate::error::{Error, Result};
use crate::exact_ot::solve_wp;
use crate::measures::DiscreteMeasure;
use crate::par::{try_map_indexed, Execution};
use crate::samplers::{derive_seed, stream_rng, Distribution};

const LABEL_SAMPLE: u64 = 0x5341_4d00;
const LABEL_SECOND: u64 = 0x5345_4300;
const LABEL_REFERENCE: u64 = 0x5245_4600;
const LABEL_PACKING: u64 = 0x5041_4300;
const LABEL_LOWER: u64 = 0x4c4f_5700;

pub const MIN_RATE_REPS: usize = 20;
pub const DEFAULT_CELL_BUDGET_SECS: f64 = 60.0;
/// Replications launched between budget checks.
const CHUNK: usize = 16;

const ZETA_TOL: f64 = 1e-9;

/// The log exponent `zeta_{p,q,d}` of the Euclidean rate.
pub fn zeta_pqd(p: f64, q: f64, d: usize) -> u32 {
    let d = d as f64;
    let eq = |a: f64, b: f64| (a - b).abs() <= ZETA_TOL * a.abs().max(b.abs()).max(1.0);
    let sob = if d > p { d * p / (d - p) } else { f64::INFINITY };
    let crit = sob.min(2.0 * p);
    if eq(d, 2.0 * p) && eq(q, 2.0 * p) {
        2
    } else if (!eq(d, 2.0 * p) && q.is_finite() && eq(q, crit)) || (eq(d, 2.0 * p) && q > d) {
        1
    } else {
        0
    }
}

/// `1/((2p) v d) ^ (1/p - 1/q)`.
pub fn rate_exponent(p: f64, q: f64, d: usize) -> f64 {
    (1.0 / (2.0 * p).max(d as f64)).min(1.0 / p - 1.0 / q)
}

/// `n^-exponent (ln n)^(zeta/p)`, the Euclidean rate with `M_q = 1`.
pub fn euclidean_reference_rate(p: f64, q: f64, d: usize, n: f64) -> Result<f64> {
    if !(p >= 1.0) || !(q > p) {
        return Err(Error::InvalidParameter(format!("need q > p >= 1, got p = {p}, q = {q}")));
    }
    if d == 0 || !(n >= 2.0) {
        return Err(Error::InvalidParameter("need d >= 1 and n >= 2".into()));
    }
    let z = zeta_pqd(p, q, d) as f64;
    Ok(n.powf(-rate_exponent(p, q, d)) * n.ln().powf(z / p))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateModel {
    /// `ln W = a + kappa ln n`.
    #[default]
    Power,
    /// `ln W = a - b ln ln n`.
    Polylog,
    /// `ln W = a - kappa sqrt(ln n)`.
    Subpoly,
}

impl RateModel {
    pub fn transform(&self, n: f64) -> f64 {
        match self {
            RateModel::Power => n.ln(),
            RateModel::Polylog => n.ln().ln(),
            RateModel::Subpoly => n.ln().sqrt(),
        }
    }

    pub fn axis_label(&self) -> &'static str {
        match self {
            RateModel::Power => "ln n",
            RateModel::Polylog => "ln ln n",
            RateModel::Subpoly => "sqrt(ln n)",
        }
    }
}

impl FromStr for RateModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "power" => Ok(RateModel::Power),
            "polylog" => Ok(RateModel::Polylog),
            "subpoly" => Ok(RateModel::Subpoly),
            o => Err(Error::InvalidParameter(format!("unknown rate model '{o}'"))),
        }
    }
}

impl fmt::Display for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateModel::Power => "power",
            RateModel::Polylog => "polylog",
            RateModel::Subpoly => "subpoly",
        })
    }
}

/// Weighted straight-line fit `y = intercept + slope x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    /// Weighted residual sum of squares over degrees of freedom.
    pub reduced_chi2: f64,
    pub residuals: Vec<f64>,
}

/// Least squares with weights `1 / var_i`; standard errors treat the
/// variances as known.
pub fn weighted_line_fit(x: &[f64], y: &[f64], var: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != var.len() {
        return Err(Error::InvalidParameter("fit inputs differ in length".into()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter("a line fit needs at least two points".into()));
    }
    if x.iter().chain(y).chain(var).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit input".into()));
    }
    let floor = var.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let w: Vec<f64> = var.iter().map(|&v| 1.0 / v.max(floor)).collect();
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        s += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::InvalidParameter("fit abscissae are degenerate".into()));
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let chi2: f64 = residuals.iter().zip(&w).map(|(r, w)| w * r * r).sum();
    let dof = x.len() - 2;
    Ok(LineFit {
        intercept,
        slope,
        intercept_se: (sxx / det).sqrt(),
        slope_se: (s / det).sqrt(),
        reduced_chi2: if dof > 0 { chi2 / dof as f64 } else { f64::NAN },
        residuals,
    })
}

/// How `E W_p(mu_hat_n, mu)` is estimated for a continuous law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// `W_p` between two independent `n`-samples. Within a factor two of
    /// the one-sample quantity by the triangle inequality.
    TwoSample,
    /// `W_p` to one fixed draw of `multiplier * n` points per grid cell.
    Reference { multiplier: usize },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::TwoSample
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateExperimentConfig {
    pub distribution: Distribution,
    pub p: f64,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub rate_model: RateModel,
    #[serde(default)]
    pub estimator: Estimator,
    /// Wall-clock budget per grid cell; slower cells are reported and left
    /// out of the fit.
    #[serde(default = "default_budget")]
    pub cell_budget_secs: Option<f64>,
    /// Theoretical slope on the model's axes, when known.
    #[serde(default)]
    pub reference_slope: Option<f64>,
}

fn default_budget() -> Option<f64> {
    Some(DEFAULT_CELL_BUDGET_SECS)
}

impl RateExperimentConfig {
    pub fn new(distribution: Distribution, p: f64, n_grid: Vec<usize>, reps: usize, seed: u64) -> Self {
        RateExperimentConfig {
            distribution,
            p,
            n_grid,
            reps,
            seed,
            rate_model: RateModel::Power,
            estimator: Estimator::TwoSample,
            cell_budget_secs: default_budget(),
            reference_slope: default_reference_slope(&distribution, p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::InvalidParameter(format!("p = {} must be >= 1", self.p)));
        }
        if self.n_grid.len() < 2 {
            return Err(Error::InvalidParameter("n_grid needs at least two sizes".into()));
        }
        if self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("n_grid must be strictly increasing from n >= 2".into()));
        }
        if self.reps < MIN_RATE_REPS {
            return Err(Error::InvalidParameter(format!(
                "reps = {} must be >= {MIN_RATE_REPS}",
                self.reps
            )));
        }
        if let Estimator::Reference { multiplier: 0 } = self.estimator {
            return Err(Error::InvalidParameter("reference multiplier must be >= 1".into()));
        }
        Ok(())
    }
}

/// Power-law slope for finite-dimensional laws: `-1/((2p) v d)` when all
/// moments exist, the general exponent for heavy tails.
pub fn default_reference_slope(d: &Distribution, p: f64) -> Option<f64> {
    match *d {
        Distribution::Uniform { d } | Distribution::Gaussian { d } => Some(-rate_exponent(p, f64::INFINITY, d)),
        Distribution::Heavy { d, q } if q > p => Some(-rate_exponent(p, q, d)),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    TimedOut,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub status: CellStatus,
    pub reps_done: usize,
    pub mean_w: f64,
    pub mc_se: f64,
    #[serde(skip)]
    pub distances: Vec<f64>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub p: f64,
    pub distribution: String,
    pub estimator: Estimator,
    pub cells: Vec<RateCell>,
    /// `None` when fewer than two cells completed.
    pub fit: Option<LineFit>,
    pub reference_slope: Option<f64>,
}

impl RateFit {
    pub fn completed(&self) -> impl Iterator<Item = &RateCell> {
        self.cells.iter().filter(|c| c.status == CellStatus::Complete)
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_cell(cfg: &RateExperimentConfig, ci: usize, n: usize, exec: Execution) -> RateCell {
    let start = Instant::now();
    let dist = &cfg.distribution;
    let reference = match cfg.estimator {
        Estimator::Reference { multiplier } => {
            match dist.empirical(multiplier * n, derive_seed(cfg.seed, LABEL_REFERENCE, ci as u64), exec) {
                Ok(r) => Some(r),
                Err(e) => return failed_cell(n, e),
            }
        }
        Estimator::TwoSample => None,
    };
    let one = |r: usize| -> Result<f64> {
        let key = ((n as u64) << 32) | r as u64;
        let a = dist.empirical(n, derive_seed(cfg.seed, LABEL_SAMPLE, key), Execution::Sequential)?;
        let b = match &reference {
            Some(rf) => return Ok(solve_wp(&a, rf, cfg.p)?.distance),
            None => dist.empirical(n, derive_seed(cfg.seed, LABEL_SECOND, key), Execution::Sequential)?,
        };
        Ok(solve_wp(&a, &b, cfg.p)?.distance)
    };
    let mut distances = Vec::with_capacity(cfg.reps);
    let mut status = CellStatus::Complete;
    while distances.len() < cfg.reps {
        if let Some(b) = cfg.cell_budget_secs {
            if start.elapsed().as_secs_f64() > b {
                status = CellStatus::TimedOut;
                break;
            }
        }
        let lo = distances.len();
        let k = CHUNK.min(cfg.reps - lo);
        match try_map_indexed(exec, k, |i| one(lo + i)) {
            Ok(v) => distances.extend(v),
            Err(e) => return failed_cell(n, e),
        }
    }
    let (mean_w, mc_se) = mean_se(&distances);
    RateCell {
        n,
        status,
        reps_done: distances.len(),
        mean_w,
        mc_se,
        distances,
        message: (status == CellStatus::TimedOut).then(|| "cell budget exceeded".to_string()),
    }
}

fn failed_cell(n: usize, e: Error) -> RateCell {
    RateCell {
        n,
        status: CellStatus::Failed,
        reps_done: 0,
        mean_w: f64::NAN,
        mc_se: f64::NAN,
        distances: vec![],
        message: Some(e.to_string()),
    }
}

/// Fits `ln mean W` against the model's transform of `n` over the
/// completed cells, weighting by the delta-method variance
/// `(se / mean)^2`.
pub fn fit_cells(model: RateModel, cells: &[RateCell]) -> Result<LineFit> {
    let done: Vec<&RateCell> = cells
        .iter()
        .filter(|c| c.status == CellStatus::Complete && c.mean_w > 0.0)
        .collect();
    let x: Vec<f64> = done.iter().map(|c| model.transform(c.n as f64)).collect();
    let y: Vec<f64> = done.iter().map(|c| c.mean_w.ln()).collect();
    let v: Vec<f64> = done
        .iter()
        .map(|c| {
            let r = c.mc_se / c.mean_w;
            if r.is_finite() {
                r * r
            } else {
                0.0
            }
        })
        .collect();
    weighted_line_fit(&x, &y, &v)
}

pub fn run_rate_experiment(cfg: &RateExperimentConfig, exec: Execution) -> Result<RateFit> {
    cfg.validate()?;
    let cells: Vec<RateCell> = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(ci, &n)| run_cell(cfg, ci, n, exec))
        .collect();
    let fit = fit_cells(cfg.rate_model, &cells).ok();
    Ok(RateFit {
        model: cfg.rate_model,
        p: cfg.p,
        distribution: cfg.distribution.to_string(),
        estimator: cfg.estimator,
        cells,
        fit,
        reference_slope: cfg.reference_slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConfig {
    pub rho: RhoFunctional,
    /// Ambient dimension for the Euclidean ball. Ellipsoids are truncated
    /// to the axes with `tau_m >= eps`.
    pub dim: Option<usize>,
    pub eps: f64,
    pub n: usize,
    pub reps: usize,
    pub p: f64,
    pub seed: u64,
    pub draw_budget: u64,
}

impl LowerBoundConfig {
    pub fn new(rho: RhoFunctional, eps: f64, n: usize, reps: usize, seed: u64) -> Self {
        LowerBoundConfig {
            rho,
            dim: None,
            eps,
            n,
            reps,
            p: 1.0,
            seed,
            draw_budget: DEFAULT_DRAW_BUDGET,
        }
    }

    pub fn packing_dim(&self) -> Result<usize> {
        match (self.rho.axes_above(self.eps), self.dim) {
            (_, Some(d)) => Ok(d),
            (Some(d), None) => Ok(d),
            (None, None) => Err(Error::InvalidParameter("the Euclidean ball needs a dimension".into())),
        }
    }
}

/// `eps_n = exp(-sqrt(2 ln gamma ln n))`.
pub fn exp_lower_bound_eps(gamma: f64, n: usize) -> f64 {
    (-(2.0 * gamma.ln() * (n as f64).ln()).sqrt()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRep {
    pub kappa: f64,
    pub w: f64,
    /// `eps kappa^(1/p)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub n: usize,
    pub eps: f64,
    pub p: f64,
    pub packing_dim: usize,
    pub packing_draws: u64,
    pub mean_kappa: f64,
    pub kappa_se: f64,
    pub mean_w: f64,
    /// Smallest `W_p / (eps kappa^(1/p))` over replications with
    /// `kappa > 0`.
    pub min_ratio: f64,
    /// Replications with `W_p < eps kappa^(1/p) - 1e-9`.
    pub violations: usize,
    pub reps: Vec<LowerBoundRep>,
}

pub const LOWER_BOUND_TOL: f64 = 1e-9;

/// Uniform measure on a greedy `eps`-packing of `n` points; each
/// replication resamples it `n` times and solves `W_p` exactly.
pub fn run_lower_bound_experiment(cfg: &LowerBoundConfig, exec: Execution) -> Result<LowerBoundReport> {
    if cfg.n == 0 || cfg.reps == 0 {
        return Err(Error::InvalidParameter("n and reps must be positive".into()));
    }
    if !(cfg.p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p = {} must be >= 1", cfg.p)));
    }
    let dim = cfg.packing_dim()?;
    let packing = greedy_packing_ellipsoid(
        &cfg.rho,
        dim,
        cfg.eps,
        cfg.n,
        cfg.draw_budget,
        derive_seed(cfg.seed, LABEL_PACKING, 0),
    )?;
    let draws = packing.draws;
    let points = packing.into_result()?;
    let n = cfg.n;
    let mu = DiscreteMeasure::new(points, vec![1.0 / n as f64; n])?;
    let rows = try_map_indexed(exec, cfg.reps, |r| -> Result<LowerBoundRep> {
        let mut rng = stream_rng(derive_seed(cfg.seed, LABEL_LOWER, 0), r as u64);
        let mut counts = vec![0usize; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        let empty = counts.iter().filter(|&&c| c == 0).count();
        let kappa = empty as f64 / n as f64;
        let nuhat = mu.with_weights(counts.iter().map(|&c| c as f64 / n as f64).collect())?;
        let w = solve_wp(&nuhat, &mu, cfg.p)?.distance;
        Ok(LowerBoundRep {
            kappa,
            w,
            bound: cfg.eps * kappa.powf(1.0 / cfg.p),
        })
    })?;
    let kappas: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
    let ws: Vec<f64> = rows.iter().map(|r| r.w).collect();
    let (mean_kappa, kappa_se) = mean_se(&kappas);
    let (mean_w, _) = mean_se(&ws);
    let min_ratio = rows
        .iter()
        .filter(|r| r.kappa > 0.0)
        .map(|r| r.w / r.bound)
        .fold(f64::INFINITY, f64::min);
    let violations = rows.iter().filter(|r| r.w < r.bound - LOWER_BOUND_TOL).count();
    Ok(LowerBoundReport {
        n,
        eps: cfg.eps,
        p: cfg.p,
        packing_dim: dim,
        packing_draws: draws,
        mean_kappa,
        kappa_se,
        mean_w,
        min_ratio,
        violations,
        reps: rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            o => Err(Error::InvalidParameter(format!("unknown report format '{o}'"))),
        }
    }
}

/// Anything `emit_report` can write.
#[derive(Clone, Copy, Debug)]
pub enum Results<'a> {
    Rate(&'a RateFit),
    Tail(&'a DeviationTail),
    LowerBound(&'a LowerBoundReport),
}

fn csv_string(r: Results<'_>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match r {
        Results::Rate(f) => {
            w.write_record(["n", "status", "reps_done", "mean_w", "mc_se", "transformed_n", "fitted_w"])?;
            for c in &f.cells {
                let x = f.model.transform(c.n as f64);
                let fitted = f.fit.as_ref().map_or(f64::NAN, |l| (l.intercept + l.slope * x).exp());
                let status = match c.status {
                    CellStatus::Complete => "complete",
                    CellStatus::TimedOut => "timed_out",
                    CellStatus::Failed => "failed",
                };
                w.write_record([
                    c.n.to_string(),
                    status.to_string(),
                    c.reps_done.to_string(),
                    c.mean_w.to_string(),
                    c.mc_se.to_string(),
                    x.to_string(),
                    fitted.to_string(),
                ])?;
            }
        }
        Results::Tail(t) => {
            w.write_record(["t", "empirical_tail", "mc_se", "bernstein_bound", "lsi_bound"])?;
            for c in &t.curve {
                w.write_record([
                    c.t.to_string(),
                    c.empirical_tail.to_string(),
                    c.mc_se.to_string(),
                    c.bernstein_bound.to_string(),
                    c.lsi_bound.to_string(),
                ])?;
            }
        }
        Results::LowerBound(l) => {
            w.write_record(["rep", "kappa", "w", "bound"])?;
            for (i, c) in l.reps.iter().enumerate() {
                w.write_record([i.to_string(), c.kappa.to_string(), c.w.to_string(), c.bound.to_string()])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_string(r: Results<'_>) -> Result<String> {
    let v = match r {
        Results::Rate(f) => serde_json::to_value(f)?,
        Results::Tail(t) => serde_json::to_value(t)?,
        Results::LowerBound(l) => serde_json::to_value(l)?,
    };
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    points: Vec<(f64, f64)>,
    /// Polylines drawn over the scatter.
    lines: Vec<Vec<(f64, f64)>>,
}

fn svg_string(r: Results<'_>) -> String {
    let plot = match r {
        Results::Rate(f) => {
            let pts: Vec<(f64, f64)> = f
                .completed()
                .filter(|c| c.mean_w > 0.0)
                .map(|c| (f.model.transform(c.n as f64), c.mean_w.ln()))
                .collect();
            let mut lines = vec![];
            if let (Some(l), Some(lo), Some(hi)) = (
                &f.fit,
                pts.iter().map(|p| p.0).reduce(f64::min),
                pts.iter().map(|p| p.0).reduce(f64::max),
            ) {
                lines.push(vec![(lo, l.intercept + l.slope * lo), (hi, l.intercept + l.slope * hi)]);
            }
            Plot {
                title: format!("{} ({})", f.distribution, f.model),
                x_label: f.model.axis_label().into(),
                y_label: "ln mean W".into(),
                points: pts,
                lines,
            }
        }
        Results::Tail(t) => Plot {
            title: "deviation tail".into(),
            x_label: "t".into(),
            y_label: "P(|W - mean| >= t)".into(),
            points: t.curve.iter().map(|c| (c.t, c.empirical_tail)).collect(),
            lines: vec![t.curve.iter().map(|c| (c.t, c.bernstein_bound)).collect()],
        },
        Results::LowerBound(l) => {
            let hi = l.reps.iter().map(|r| r.bound.max(r.w)).fold(0.0, f64::max);
            Plot {
                title: format!("lower bound, n = {}", l.n),
                x_label: "eps kappa^(1/p)".into(),
                y_label: "W_p".into(),
                points: l.reps.iter().map(|r| (r.bound, r.w)).collect(),
                lines: vec![vec![(0.0, 0.0), (hi, hi)]],
            }
        }
    };
    render_svg(&plot)
}

fn render_svg(plot: &Plot) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let all = plot.points.iter().chain(plot.lines.iter().flatten()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    s += &format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    s += &format!(
        "<rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * M,
        H - 2.0 * M
    );
    s += &format!("<text x=\"{}\" y=\"30\" text-anchor=\"middle\">{}</text>\n", W / 2.0, escape(&plot.title));
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        H - 15.0,
        escape(&plot.x_label)
    );
    s += &format!(
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        escape(&plot.y_label)
    );
    for (v, label) in [(x0, x0), (x1, x1)] {
        s += &format!("<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{:.4}</text>\n", sx(v), H - M + 14.0, label);
    }
    for v in [y0, y1] {
        s += &format!("<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\">{:.4}</text>\n", M - 4.0, sy(v), v);
    }
    for line in &plot.lines {
        let pts: Vec<String> = line
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"red\"/>\n", pts.join(" "));
    }
    for &(x, y) in plot.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        s += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n", sx(x), sy(y));
    }
    s += "</svg>\n";
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `results` in `format`.
pub fn render_report(results: Results<'_>, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv_string(results),
        ReportFormat::Json => json_string(results),
        ReportFormat::Svg => Ok(svg_string(results)),
    }
}

/// Writes `<stem>.<ext>` into `dir` for each format and returns the paths.
pub fn emit_report(results: Results<'_>, formats: &[ReportFormat], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        let body = render_report(results, *f)?;
        let mut file = fs::File::create(&path)?;
        file.write_all(body.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_table() {
        assert_eq!(zeta_pqd(1.0, 3.0, 4), 0);
        assert_eq!(zeta_pqd(1.0, 2.0, 2), 2);
        assert_eq!(zeta_pqd(1.0, 3.0, 2), 1);
        // d = 3, p = 1: dp/(d-p) = 1.5, so q = 1.5 is a boundary case.
        assert_eq!(zeta_pqd(1.0, 1.5, 3), 1);
        // d <= p: the Sobolev exponent is infinite and 2p is the threshold.
        assert_eq!(zeta_pqd(2.0, 4.0, 1), 1);
        assert_eq!(zeta_pqd(1.0, 5.0, 1), 0);
    }

    #[test]
    fn reference_rate_examples() {
        assert!((rate_exponent(1.0, 3.0, 4) - 0.25).abs() < 1e-15);
        let a = euclidean_reference_rate(1.0, 3.0, 4, 100.0).unwrap();
        let b = euclidean_reference_rate(1.0, 3.0, 4, 100.0 * std::f64::consts::E).unwrap();
        assert!((b / a - (-0.25f64).exp()).abs() < 1e-14);
        assert!(euclidean_reference_rate(2.0, 2.0, 4, 10.0).is_err());
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let f = weighted_line_fit(&x, &y, &[1.0; 4]).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 0.5).abs() < 1e-12);
        assert!(f.reduced_chi2 < 1e-20);
    }

    #[test]
    fn config_validation() {
        let d = Distribution::Uniform { d: 2 };
        assert!(RateExperimentConfig::new(d, 1.0, vec![8, 16], 20, 1).validate().is_ok());
        assert!(RateExperimentConfig::new(d, 1.0, vec![16, 8], 20, 1).validate().is_err());
        assert!(RateExperimentConfig::new(d, 1.0, vec![16], 20, 1).validate().is_err());
        assert!(RateExperimentConfig::new(d, 1.0, vec![8, 16], 19, 1).validate().is_err());
    }

    #[test]
    fn single_atom_lower_bound() {
        let cfg = LowerBoundConfig {
            dim: Some(2),
            ..LowerBoundConfig::new(RhoFunctional::Euclidean, 0.1, 1, 5, 3)
        };
        let r = run_lower_bound_experiment(&cfg, Execution::Sequential).unwrap();
        assert!(r.reps.iter().all(|x| x.kappa == 0.0 && x.w == 0.0));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn empty_rate_csv_has_header() {
        let f = RateFit {
            model: RateModel::Power,
            p: 1.0,
            distribution: "uniform:d=1".into(),
            estimator: Estimator::TwoSample,
            cells: vec![],
            fit: None,
            reference_slope: None,
        };
        let s = render_report(Results::Rate(&f), ReportFormat::Csv).unwrap();
        assert_eq!(s, "n,status,reps_done,mean_w,mc_se,transformed_n,fitted_w\n");
        assert!(render_report(Results::Rate(&f), ReportFormat::Svg).unwrap().starts_with("<svg"));
    }
}
