//! Reproducible samplers: uniform cube, Gaussian, heavy-tailed radial laws
//! and truncated Karhunen-Loeve expansions with polynomial or exponential
//! spectra. Sample `i` of a run with seed `s` is drawn from ChaCha8 stream
//! `i` of key `s`, so draws do not depend on how work is split over threads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::covering::{arg, parse_spec, RhoFunctional};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Point};
use crate::par::{map_indexed, Execution};

/// Relative tail energy allowed by the default truncation.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Extra Pareto index on top of the declared number of finite moments.
pub const HEAVY_TAIL_MARGIN: f64 = 0.5;

/// The generator for sample `index` of a run keyed by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a run seed with a label and an index (splitmix64 finaliser), for
/// deriving independent seeds for replications and reference draws.
pub fn derive_seed(seed: u64, label: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(label.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `sum_{m >= a} m^-s` for `s > 1`, by direct summation of the first terms
/// and an Euler-Maclaurin tail.
pub fn zeta_tail(s: f64, a: u64) -> f64 {
    debug_assert!(s > 1.0 && a >= 1);
    let direct = 32u64;
    let mut sum = 0.0;
    for m in a..a + direct {
        sum += (m as f64).powf(-s);
    }
    let n = (a + direct) as f64;
    let b = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
    let mut tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // Terms B_2k / (2k)! * s (s+1) ... (s+2k-2) * n^(-s-2k+1).
    let mut rising = s;
    let mut fact = 2.0;
    for (k, bk) in b.iter().enumerate() {
        let k2 = 2 * (k as i32 + 1);
        tail += bk / fact * rising * n.powf(-s - k2 as f64 + 1.0);
        rising *= (s + k2 as f64 - 1.0) * (s + k2 as f64);
        fact *= (k2 as f64 + 1.0) * (k2 as f64 + 2.0);
    }
    sum + tail
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decay {
    /// `sigma_m = c0 m^-(b0 + 1/2)`.
    Poly { b0: f64, c0: f64 },
    /// `sigma_m = c0 gamma0^-(m-1)`.
    Exp { gamma0: f64, c0: f64 },
}

impl Decay {
    pub fn sigma(&self, m: usize) -> f64 {
        match *self {
            Decay::Poly { b0, c0 } => c0 * (m as f64).powf(-(b0 + 0.5)),
            Decay::Exp { gamma0, c0 } => c0 * gamma0.powi(1 - m as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Decay::Poly { b0, c0 } if b0 > 0.0 && c0 >= 0.0 && c0.is_finite() => Ok(()),
            Decay::Exp { gamma0, c0 } if gamma0 > 1.0 && c0 >= 0.0 && c0.is_finite() => Ok(()),
            d => Err(Error::InvalidParameter(format!("invalid decay {d:?}"))),
        }
    }

    /// `sum_{m > dim} sigma_m^2 / sum_m sigma_m^2`.
    pub fn relative_tail(&self, dim: usize) -> f64 {
        match *self {
            Decay::Poly { b0, .. } => {
                let s = 2.0 * b0 + 1.0;
                zeta_tail(s, dim as u64 + 1) / zeta_tail(s, 1)
            }
            Decay::Exp { gamma0, .. } => gamma0.powf(-2.0 * dim as f64),
        }
    }

    /// Smallest dimension whose relative tail energy is at most `tol`.
    pub fn truncation_for(&self, tol: f64) -> usize {
        match *self {
            Decay::Exp { gamma0, .. } => ((1.0 / tol).ln() / (2.0 * gamma0.ln())).ceil().max(1.0) as usize,
            Decay::Poly { .. } => {
                let mut lo = 1usize;
                let mut hi = 1usize;
                while self.relative_tail(hi) > tol {
                    lo = hi;
                    hi *= 2;
                }
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if self.relative_tail(mid) > tol {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }
}

/// Law of the standardised scores `Z_m` (mean 0, variance 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreDist {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
    /// Laplace with scale `1/sqrt 2`.
    Laplace,
}

impl ScoreDist {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScoreDist::Gaussian => StandardNormal.sample(rng),
            ScoreDist::Uniform => {
                let a = 3f64.sqrt();
                rng.random_range(-a..=a)
            }
            ScoreDist::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                s * e * std::f64::consts::FRAC_1_SQRT_2
            }
        }
    }

    /// `(E |Z|^q)^(1/q)`.
    pub fn q_norm(&self, q: f64) -> f64 {
        let m = match self {
            ScoreDist::Gaussian => {
                (0.5 * q * 2f64.ln() + ln_gamma(0.5 * (q + 1.0)) - 0.5 * std::f64::consts::PI.ln()).exp()
            }
            ScoreDist::Uniform => 3f64.powf(0.5 * q) / (q + 1.0),
            ScoreDist::Laplace => std::f64::consts::FRAC_1_SQRT_2.powf(q) * gamma(q + 1.0),
        };
        m.powf(1.0 / q)
    }
}

impl FromStr for ScoreDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(ScoreDist::Gaussian),
            "uniform" | "bounded" => Ok(ScoreDist::Uniform),
            "laplace" | "exponential" => Ok(ScoreDist::Laplace),
            other => Err(Error::InvalidParameter(format!("unknown score law '{other}'"))),
        }
    }
}

impl fmt::Display for ScoreDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreDist::Gaussian => "gaussian",
            ScoreDist::Uniform => "uniform",
            ScoreDist::Laplace => "laplace",
        })
    }
}

/// Truncated expansion `X = sum_{m <= M} sigma_m Z_m e_m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KLSpec {
    pub decay: Decay,
    pub scores: ScoreDist,
    pub truncation_dim: usize,
}

impl KLSpec {
    /// Uses the default truncation (relative tail energy `<= 1e-6`) when
    /// `truncation_dim` is `None`.
    pub fn new(decay: Decay, scores: ScoreDist, truncation_dim: Option<usize>) -> Result<Self> {
        decay.validate()?;
        let m = truncation_dim.unwrap_or_else(|| decay.truncation_for(DEFAULT_TAIL_TOL));
        if m == 0 {
            return Err(Error::InvalidParameter("truncation dimension must be >= 1".into()));
        }
        Ok(KLSpec {
            decay,
            scores,
            truncation_dim: m,
        })
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (1..=self.truncation_dim).map(|m| self.decay.sigma(m)).collect()
    }

    pub fn relative_tail(&self) -> f64 {
        self.decay.relative_tail(self.truncation_dim)
    }
}

/// `n` draws of the truncated expansion.
pub fn sample_kl(spec: &KLSpec, n: usize, seed: u64) -> Vec<Point> {
    sample_kl_with(spec, n, seed, Execution::default())
}

pub fn sample_kl_with(spec: &KLSpec, n: usize, seed: u64, exec: Execution) -> Vec<Point> {
    let sig = spec.sigmas();
    map_indexed(exec, n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let x = sig.iter().map(|s| s * spec.scores.draw(&mut rng)).collect();
        Point::new(x).expect("finite draw")
    })
}

/// Upper bound `||Z||_q (sum_m (sigma_m / tau_m)^2)^(1/2)` on the `q`-th
/// `rho`-moment of the (untruncated) expansion, `q >= 2`.
pub fn fpc_moment_bound(spec: &KLSpec, rho: &RhoFunctional, q: f64, score_q_norm: f64) -> Result<f64> {
    if !(q >= 2.0) {
        return Err(Error::InvalidParameter(format!("q = {q} must be >= 2")));
    }
    rho.validate()?;
    let series = match (spec.decay, *rho) {
        (Decay::Poly { b0, c0 }, RhoFunctional::Euclidean) => c0 * c0 * zeta_tail(2.0 * b0 + 1.0, 1),
        (Decay::Exp { gamma0, c0 }, RhoFunctional::Euclidean) => c0 * c0 / (1.0 - gamma0.powi(-2)),
        (Decay::Poly { b0, c0 }, RhoFunctional::Poly { b }) => {
            if b >= b0 {
                return Err(Error::Divergent(format!("need b < b0, got b = {b}, b0 = {b0}")));
            }
            c0 * c0 * zeta_tail(2.0 * (b0 - b) + 1.0, 1)
        }
        (Decay::Exp { gamma0, c0 }, RhoFunctional::Exp { gamma }) => {
            if gamma >= gamma0 {
                return Err(Error::Divergent(format!(
                    "need gamma < gamma0, got gamma = {gamma}, gamma0 = {gamma0}"
                )));
            }
            let r = gamma / gamma0;
            c0 * c0 / (1.0 - r * r)
        }
        (Decay::Poly { .. }, RhoFunctional::Exp { .. }) => {
            return Err(Error::Divergent(
                "polynomial spectrum against an exponential ellipsoid".into(),
            ))
        }
        (Decay::Exp { gamma0, c0 }, RhoFunctional::Poly { b }) => {
            // Terms c0^2 gamma0^(-2(m-1)) m^(2b): sum until they are negligible.
            let mut sum = 0.0;
            let mut m = 1usize;
            loop {
                let t = c0 * c0 * gamma0.powf(-2.0 * (m as f64 - 1.0)) * (m as f64).powf(2.0 * b);
                sum += t;
                if m > 10 && t < 1e-17 * sum {
                    break;
                }
                m += 1;
            }
            sum
        }
    };
    Ok(score_q_norm * series.sqrt())
}

/// Empirical `q`-th `rho`-moment of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCertificate {
    pub q: f64,
    pub m_q_analytic: Option<f64>,
    pub m_q_empirical: f64,
    pub sample_size: usize,
}

/// `(mean rho(x)^q)^(1/q)`.
pub fn estimate_moment(samples: &[Point], rho: &RhoFunctional, q: f64) -> Result<MomentCertificate> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q} must be >= 1")));
    }
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let s: f64 = samples.iter().map(|x| rho.eval(x.coords()).powf(q)).sum();
    Ok(MomentCertificate {
        q,
        m_q_analytic: None,
        m_q_empirical: (s / samples.len() as f64).powf(1.0 / q),
        sample_size: samples.len(),
    })
}

/// `(E |X|^q)^(1/q)` for a standard Gaussian vector in `R^d`.
pub fn gaussian_norm_moment(d: usize, q: f64) -> f64 {
    let h = 0.5 * d as f64;
    ((0.5 * q) * 2f64.ln() + ln_gamma(h + 0.5 * q) - ln_gamma(h)).exp().powf(1.0 / q)
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let r = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if r > 1e-300 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Radially symmetric law in `R^d` with Pareto radius `R = U^(-1/alpha)`,
/// `alpha = q_finite + 0.5`: moments of `|X|` are finite exactly below
/// `alpha`. For `d = 1` this is a symmetric signed Pareto.
pub fn sample_heavy_tail(d: usize, q_finite: f64, n: usize, seed: u64) -> Result<Vec<Point>> {
    sample_heavy_tail_with(d, q_finite, n, seed, Execution::default())
}

pub fn sample_heavy_tail_with(
    d: usize,
    q_finite: f64,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Point>> {
    if !(q_finite > 1.0) {
        return Err(Error::InvalidParameter(format!("q_finite = {q_finite} must exceed 1")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    let alpha = q_finite + HEAVY_TAIL_MARGIN;
    Ok(map_indexed(exec, n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let u: f64 = 1.0 - rng.random::<f64>();
        let r = u.powf(-1.0 / alpha);
        let dir = unit_direction(&mut rng, d);
        Point::new(dir.into_iter().map(|x| r * x).collect()).expect("finite draw")
    }))
}

pub fn sample_uniform_cube(d: usize, n: usize, seed: u64, exec: Execution) -> Vec<Point> {
    map_indexed(exec, n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        Point::new((0..d).map(|_| rng.random::<f64>()).collect()).expect("finite draw")
    })
}

pub fn sample_gaussian(d: usize, n: usize, seed: u64, exec: Execution) -> Vec<Point> {
    map_indexed(exec, n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        Point::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).expect("finite draw")
    })
}

/// The sampling laws used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distribution {
    /// Uniform on `[0, 1]^d`.
    Uniform { d: usize },
    /// Standard Gaussian on `R^d`.
    Gaussian { d: usize },
    /// See [`sample_heavy_tail`].
    Heavy { d: usize, q: f64 },
    Kl(KLSpec),
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match *self {
            Distribution::Uniform { d } | Distribution::Gaussian { d } | Distribution::Heavy { d, .. } => d,
            Distribution::Kl(s) => s.truncation_dim,
        }
    }

    pub fn sample(&self, n: usize, seed: u64, exec: Execution) -> Result<Vec<Point>> {
        Ok(match *self {
            Distribution::Uniform { d } => sample_uniform_cube(d, n, seed, exec),
            Distribution::Gaussian { d } => sample_gaussian(d, n, seed, exec),
            Distribution::Heavy { d, q } => sample_heavy_tail_with(d, q, n, seed, exec)?,
            Distribution::Kl(s) => sample_kl_with(&s, n, seed, exec),
        })
    }

    /// Empirical measure of `n` draws.
    pub fn empirical(&self, n: usize, seed: u64, exec: Execution) -> Result<DiscreteMeasure> {
        let pts = self.sample(n, seed, exec)?;
        let d = self.dim();
        let mut coords = Vec::with_capacity(n * d);
        for p in &pts {
            coords.extend_from_slice(p.coords());
        }
        DiscreteMeasure::from_flat(d, coords, vec![1.0 / n as f64; n])
    }

    /// Parses `uniform:d=4`, `gaussian:d=4`, `heavy:d=3,q=3`,
    /// `poly:b0=2,c0=1[,m=30]`, `exp:gamma0=2,c0=1[,m=30]`; `scores` applies
    /// to the last two.
    pub fn parse(s: &str, scores: ScoreDist) -> Result<Self> {
        let (kind, args) = parse_spec(s)?;
        let need = |key: &str| {
            arg(&args, key).ok_or_else(|| Error::InvalidParameter(format!("{kind} needs {key}=")))
        };
        let dim = |key: &str| -> Result<usize> {
            let v = need(key)?;
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParameter(format!("{key} = {v} must be a positive integer")))
            }
        };
        let m = match arg(&args, "m") {
            Some(v) if v >= 1.0 && v.fract() == 0.0 => Some(v as usize),
            Some(v) => return Err(Error::InvalidParameter(format!("m = {v} must be a positive integer"))),
            None => None,
        };
        let c0 = arg(&args, "c0").unwrap_or(1.0);
        match kind.as_str() {
            "uniform" | "cube" => Ok(Distribution::Uniform { d: dim("d")? }),
            "gaussian" | "normal" => Ok(Distribution::Gaussian { d: dim("d")? }),
            "heavy" => Ok(Distribution::Heavy {
                d: dim("d")?,
                q: need("q")?,
            }),
            "poly" => Ok(Distribution::Kl(KLSpec::new(
                Decay::Poly { b0: need("b0")?, c0 },
                scores,
                m,
            )?)),
            "exp" => Ok(Distribution::Kl(KLSpec::new(
                Decay::Exp {
                    gamma0: need("gamma0")?,
                    c0,
                },
                scores,
                m,
            )?)),
            _ => Err(Error::InvalidParameter(format!("unknown distribution '{kind}'"))),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform { d } => write!(f, "uniform:d={d}"),
            Distribution::Gaussian { d } => write!(f, "gaussian:d={d}"),
            Distribution::Heavy { d, q } => write!(f, "heavy:d={d},q={q}"),
            Distribution::Kl(s) => match s.decay {
                Decay::Poly { b0, c0 } => write!(f, "poly:b0={b0},c0={c0},m={} ({})", s.truncation_dim, s.scores),
                Decay::Exp { gamma0, c0 } => {
                    write!(f, "exp:gamma0={gamma0},c0={c0},m={} ({})", s.truncation_dim, s.scores)
                }
            },
        }
    }
}
