//! Tail bounds for `W_p` of an empirical measure around its mean, and a
//! Monte Carlo estimate of the deviation tail to check them against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_ot::solve_wp;
use crate::measures::norm;
use crate::par::{try_map_indexed, Execution};
use crate::samplers::{derive_seed, Distribution};

const LABEL_REFERENCE: u64 = 0x5245_4600;
const LABEL_REPLICATE: u64 = 0x5245_5000;
const LABEL_ORLICZ: u64 = 0x4f52_4c00;

/// Default size of the reference draw standing in for the population.
pub const DEFAULT_REFERENCE_SIZE: usize = 4096;
pub const DEFAULT_GRID_POINTS: usize = 20;
pub const DEFAULT_ORLICZ_SAMPLES: usize = 100_000;
pub const MIN_REPS: usize = 100;

/// Parameters of the tail bounds. `sigma2` and `m` are the Bernstein-type
/// moment constants of the differences; `s`, `v` bound the moments of
/// `|X|`; `c_lsi` is a log-Sobolev constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub sigma2: f64,
    pub m: f64,
    pub s: f64,
    pub v: f64,
    pub c_lsi: Option<f64>,
    pub p: f64,
    pub n: usize,
}

impl ConcentrationParams {
    /// Constants implied by `|| |X| ||_psi1 = c`: `V = c`, `s = sqrt(2) c`,
    /// and per-point differences with `sigma_i = 2 s n^(-1/p)`,
    /// `M = 2 V n^(-1/p)`.
    pub fn from_orlicz(c: f64, p: f64, n: usize) -> Result<Self> {
        let s = std::f64::consts::SQRT_2 * c;
        Self::from_norm_moments(s, c, p, n)
    }

    pub fn from_norm_moments(s: f64, v: f64, p: f64, n: usize) -> Result<Self> {
        let scale = (n as f64).powf(-1.0 / p);
        let sigma_i = 2.0 * s * scale;
        let out = ConcentrationParams {
            sigma2: n as f64 * sigma_i * sigma_i,
            m: 2.0 * v * scale,
            s,
            v,
            c_lsi: None,
            p,
            n,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn with_lsi(mut self, c: Option<f64>) -> Self {
        self.c_lsi = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !(ok(self.sigma2) && ok(self.s) && ok(self.v) && self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid concentration constants {self:?}")));
        }
        if !(self.p >= 1.0) || self.n == 0 {
            return Err(Error::InvalidParameter("need p >= 1 and n >= 1".into()));
        }
        if let Some(c) = self.c_lsi {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!("log-Sobolev constant {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// One-sided bound `exp(-t^2 / (2 sigma^2 + 2 t M))`, capped at one.
pub fn bernstein_mcdiarmid_tail(params: &ConcentrationParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok((-t * t / (2.0 * params.sigma2 + 2.0 * t * params.m)).exp().min(1.0))
}

/// Two-sided bound `2 exp(-t^2 / (8 s^2 n^(1-2/p) + 4 V t n^(-1/p)))`,
/// capped at one.
pub fn wasserstein_mean_tail(params: &ConcentrationParams, t: f64) -> f64 {
    if !(t > 0.0) {
        return 1.0;
    }
    let n = params.n as f64;
    let p = params.p;
    let denom = 8.0 * params.s * params.s * n.powf(1.0 - 2.0 / p) + 4.0 * params.v * t * n.powf(-1.0 / p);
    (2.0 * (-t * t / denom).exp()).min(1.0)
}

/// One-sided bound `exp(-n^(2/(2 v p)) t^2 / (2C))` under a log-Sobolev
/// inequality with constant `C`. For a density `exp(-U)` on `R^d` with
/// `U'' >= I/C` the constant `C` is admissible; a standard Gaussian has
/// `C = 1`.
pub fn lsi_mean_tail(c_lsi: f64, n: usize, p: f64, t: f64) -> f64 {
    if !(t > 0.0) {
        return 1.0;
    }
    let e = 2.0 / p.max(2.0);
    (-(n as f64).powf(e) * t * t / (2.0 * c_lsi)).exp().min(1.0)
}

/// Bernstein constants `(sigma^2, M)` of a sum of `n` centred terms with
/// variance `variance` bounded by `bound`: `sigma_i^2 = variance`,
/// `M = bound / 3`.
pub fn bounded_sum_params(n: usize, variance: f64, bound: f64) -> (f64, f64) {
    (n as f64 * variance, bound / 3.0)
}

/// `exp(-t^2 / (2 (n v + b t / 3)))`.
pub fn classical_bernstein(n: usize, variance: f64, bound: f64, t: f64) -> f64 {
    (-t * t / (2.0 * (n as f64 * variance + bound * t / 3.0))).exp().min(1.0)
}

fn orlicz_mean(z: &[f64], c: f64, alpha: f64) -> f64 {
    z.iter().map(|x| (x.abs() / c).powf(alpha).exp()).sum::<f64>() / z.len() as f64
}

/// Empirical `psi_alpha` norm: the smallest `c` with
/// `mean exp(|z_i / c|^alpha) <= 2`, to `1e-6` relative.
pub fn orlicz_norm(z: &[f64], alpha: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be >= 1")));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("orlicz sample".into()));
    }
    let max = z.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if max == 0.0 {
        return Ok(0.0);
    }
    let mut lo = max / 1e3;
    let mut hi = max * 1e3;
    while orlicz_mean(z, lo, alpha) <= 2.0 {
        lo /= 1e3;
    }
    while !(orlicz_mean(z, hi, alpha) <= 2.0) {
        hi *= 1e3;
    }
    while hi - lo > 1e-7 * hi {
        let mid = 0.5 * (lo + hi);
        if orlicz_mean(z, mid, alpha) <= 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationConfig {
    pub distribution: Distribution,
    pub n: usize,
    pub p: f64,
    pub reps: usize,
    pub seed: u64,
    pub reference_size: usize,
    pub grid_points: usize,
    pub orlicz_samples: usize,
    /// Log-Sobolev constant of the sampled law, when one is known.
    pub c_lsi: Option<f64>,
}

impl DeviationConfig {
    pub fn new(distribution: Distribution, n: usize, p: f64, reps: usize, seed: u64) -> Self {
        DeviationConfig {
            distribution,
            n,
            p,
            reps,
            seed,
            reference_size: DEFAULT_REFERENCE_SIZE,
            grid_points: DEFAULT_GRID_POINTS,
            orlicz_samples: DEFAULT_ORLICZ_SAMPLES,
            c_lsi: default_lsi_constant(&distribution),
        }
    }
}

/// Standard Gaussians have log-Sobolev constant one; a Gaussian expansion
/// has the largest score variance.
pub fn default_lsi_constant(d: &Distribution) -> Option<f64> {
    use crate::samplers::ScoreDist;
    match d {
        Distribution::Gaussian { .. } => Some(1.0),
        Distribution::Kl(s) if s.scores == ScoreDist::Gaussian => {
            let s1 = s.sigmas().into_iter().fold(0.0f64, f64::max);
            (s1 > 0.0).then_some(s1 * s1)
        }
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    pub empirical_tail: f64,
    pub mc_se: f64,
    /// Two-sided `wasserstein_mean_tail` bound.
    pub bernstein_bound: f64,
    /// Two-sided log-Sobolev bound (twice the one-sided value, capped),
    /// `NaN` when no constant is known.
    pub lsi_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationTail {
    pub distances: Vec<f64>,
    pub mean: f64,
    pub orlicz_c: f64,
    pub params: ConcentrationParams,
    pub curve: Vec<TailPoint>,
}

impl DeviationTail {
    /// Grid points where the empirical tail exceeds the bound by more than
    /// `k` standard errors.
    pub fn violations(&self, k: f64) -> Vec<TailPoint> {
        self.curve
            .iter()
            .filter(|c| c.empirical_tail > c.bernstein_bound + k * c.mc_se)
            .copied()
            .collect()
    }
}

/// Fraction of `|x_i - mean| >= t` and its binomial standard error.
pub fn empirical_tail(deviations: &[f64], t: f64) -> (f64, f64) {
    let r = deviations.len() as f64;
    let f = deviations.iter().filter(|&&d| d >= t).count() as f64 / r;
    (f, (f * (1.0 - f) / r).sqrt())
}

/// Replicates `W_p(mu_hat_n, mu_ref)` against a fixed reference draw and
/// compares its two-sided deviation tail around the replication mean with
/// `wasserstein_mean_tail`, `(s, V)` coming from the empirical `psi_1` norm of
/// `|X|`.
pub fn mc_deviation_tail(cfg: &DeviationConfig, exec: Execution) -> Result<DeviationTail> {
    if cfg.reps < MIN_REPS {
        return Err(Error::InvalidParameter(format!("reps = {} must be >= {MIN_REPS}", cfg.reps)));
    }
    if cfg.n == 0 || cfg.reference_size == 0 || cfg.grid_points < 2 || cfg.orlicz_samples == 0 {
        return Err(Error::InvalidParameter("sizes must be positive and the grid needs two points".into()));
    }
    let dist = &cfg.distribution;
    let reference = dist.empirical(cfg.reference_size, derive_seed(cfg.seed, LABEL_REFERENCE, 0), exec)?;
    let distances = try_map_indexed(exec, cfg.reps, |r| -> Result<f64> {
        let mu = dist.empirical(cfg.n, derive_seed(cfg.seed, LABEL_REPLICATE, r as u64), Execution::Sequential)?;
        Ok(solve_wp(&mu, &reference, cfg.p)?.distance)
    })?;
    let mean = distances.iter().sum::<f64>() / cfg.reps as f64;
    let dev: Vec<f64> = distances.iter().map(|d| (d - mean).abs()).collect();

    let norms: Vec<f64> = dist
        .sample(cfg.orlicz_samples, derive_seed(cfg.seed, LABEL_ORLICZ, 0), exec)?
        .iter()
        .map(|x| norm(x.coords()))
        .collect();
    let orlicz_c = orlicz_norm(&norms, 1.0)?;
    let params = ConcentrationParams::from_orlicz(orlicz_c, cfg.p, cfg.n)?.with_lsi(cfg.c_lsi);

    let t_max = dev.iter().fold(0.0f64, |a, &d| a.max(d)) * 1.05;
    let g = cfg.grid_points;
    let curve = (0..g)
        .map(|k| {
            let t = t_max * k as f64 / (g - 1) as f64;
            let (empirical_tail, mc_se) = empirical_tail(&dev, t);
            TailPoint {
                t,
                empirical_tail,
                mc_se,
                bernstein_bound: wasserstein_mean_tail(&params, t),
                lsi_bound: params
                    .c_lsi
                    .map_or(f64::NAN, |c| (2.0 * lsi_mean_tail(c, cfg.n, cfg.p, t)).min(1.0)),
            }
        })
        .collect();
    Ok(DeviationTail {
        distances,
        mean,
        orlicz_c,
        params,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma2: f64, m: f64) -> ConcentrationParams {
        ConcentrationParams {
            sigma2,
            m,
            s: 1.0,
            v: 1.0,
            c_lsi: None,
            p: 1.0,
            n: 1,
        }
    }

    #[test]
    fn bernstein_examples() {
        assert_eq!(bernstein_mcdiarmid_tail(&params(1.0, 1.0), 0.0).unwrap(), 1.0);
        let b = bernstein_mcdiarmid_tail(&params(1.0, 1e-12), 2.0).unwrap();
        assert!((b - (-2.0f64).exp()).abs() < 1e-11);
        assert!(bernstein_mcdiarmid_tail(&params(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn mean_tail_is_mcdiarmid_with_plugged_constants() {
        for &(s, v, p, n) in &[(1.0, 1.0, 1.0, 10), (0.3, 2.0, 1.5, 256), (2.0, 0.5, 2.0, 1000)] {
            let pr = ConcentrationParams::from_norm_moments(s, v, p, n).unwrap();
            for &t in &[0.01, 0.1, 1.0, 5.0] {
                let one = bernstein_mcdiarmid_tail(&pr, t).unwrap();
                let two = wasserstein_mean_tail(&pr, t);
                assert!((two - (2.0 * one).min(1.0)).abs() <= 1e-12 * two.max(1e-300));
            }
        }
    }

    #[test]
    fn lsi_examples() {
        let v = lsi_mean_tail(1.0, 100, 1.0, 0.1);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        let a = lsi_mean_tail(1.0, 100, 4.0, 0.1);
        assert!((a - (-0.05f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn orlicz_examples() {
        assert_eq!(orlicz_norm(&[0.0, 0.0], 1.0).unwrap(), 0.0);
        let c = orlicz_norm(&[1.5; 7], 1.0).unwrap();
        assert!((c - 1.5 / 2f64.ln()).abs() < 2e-6 * c);
        let c2 = orlicz_norm(&[2.0; 3], 2.0).unwrap();
        assert!((c2 - 2.0 / 2f64.ln().sqrt()).abs() < 2e-6 * c2);
    }

    #[test]
    fn tail_counts() {
        let (f, se) = empirical_tail(&[0.0, 0.1, 0.2, 0.3], 0.15);
        assert_eq!(f, 0.5);
        assert!((se - 0.25).abs() < 1e-15);
        assert_eq!(empirical_tail(&[0.0, 0.1], 0.0).0, 1.0);
    }
}
