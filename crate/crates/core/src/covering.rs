//! The gauge functionals `rho`, covering-number bounds for their unit balls,
//! and greedy covering / packing constructions on finite point sets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{squared_euclidean, Point};

/// Gauge `rho(x) = (sum_m (x_m / tau_m)^2)^(1/2)` with `tau_m <= 1`.
///
/// `Euclidean` has `tau_m = 1`, `Poly` has `tau_m = m^-b`, `Exp` has
/// `tau_m = gamma^-(m-1)`. Vectors are evaluated over their own length, so
/// the truncation dimension is that of the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RhoFunctional {
    Euclidean,
    Poly { b: f64 },
    Exp { gamma: f64 },
}

impl RhoFunctional {
    pub fn poly(b: f64) -> Result<Self> {
        let r = RhoFunctional::Poly { b };
        r.validate()?;
        Ok(r)
    }

    pub fn exp(gamma: f64) -> Result<Self> {
        let r = RhoFunctional::Exp { gamma };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RhoFunctional::Euclidean => Ok(()),
            RhoFunctional::Poly { b } if b > 0.5 && b.is_finite() => Ok(()),
            RhoFunctional::Poly { b } => Err(Error::InvalidParameter(format!(
                "poly exponent b = {b} must exceed 1/2"
            ))),
            RhoFunctional::Exp { gamma } if gamma > 1.0 && gamma.is_finite() => Ok(()),
            RhoFunctional::Exp { gamma } => Err(Error::InvalidParameter(format!(
                "exp base gamma = {gamma} must exceed 1"
            ))),
        }
    }

    /// Semi-axis `tau_m`, `m >= 1`.
    pub fn tau(&self, m: usize) -> f64 {
        debug_assert!(m >= 1);
        match *self {
            RhoFunctional::Euclidean => 1.0,
            RhoFunctional::Poly { b } => (m as f64).powf(-b),
            RhoFunctional::Exp { gamma } => gamma.powi(1 - m as i32),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RhoFunctional::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            _ => x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let r = v / self.tau(i + 1);
                    r * r
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Number of leading axes with `tau_m >= eps`; these are the coordinates
    /// that matter when resolving the unit ball at scale `eps`.
    pub fn axes_above(&self, eps: f64) -> Option<usize> {
        match *self {
            RhoFunctional::Euclidean => None,
            RhoFunctional::Poly { b } => Some(eps.powf(-1.0 / b).floor().max(1.0) as usize),
            RhoFunctional::Exp { gamma } => {
                Some(((1.0 / eps).ln() / gamma.ln()).floor().max(0.0) as usize + 1)
            }
        }
    }
}

impl fmt::Display for RhoFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoFunctional::Euclidean => write!(f, "euclidean"),
            RhoFunctional::Poly { b } => write!(f, "poly:b={b}"),
            RhoFunctional::Exp { gamma } => write!(f, "exp:gamma={gamma}"),
        }
    }
}

/// Parses `kind:key=value,...` into `(kind, [(key, value)])`.
pub(crate) fn parse_spec(s: &str) -> Result<(String, Vec<(String, f64)>)> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut args = Vec::new();
    for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got '{part}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("'{v}' is not a number")))?;
        args.push((k.trim().to_string(), v));
    }
    Ok((kind.trim().to_ascii_lowercase(), args))
}

pub(crate) fn arg(args: &[(String, f64)], key: &str) -> Option<f64> {
    args.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
}

impl FromStr for RhoFunctional {
    type Err = Error;

    /// `euclidean`, `poly:b=1`, `exp:gamma=2`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = parse_spec(s)?;
        let need = |key: &str| {
            arg(&args, key).ok_or_else(|| Error::InvalidParameter(format!("{kind} needs {key}=")))
        };
        match kind.as_str() {
            "euclidean" | "euclid" => Ok(RhoFunctional::Euclidean),
            "poly" => RhoFunctional::poly(need("b")?),
            "exp" => RhoFunctional::exp(need("gamma")?),
            _ => Err(Error::InvalidParameter(format!("unknown rho kind '{kind}'"))),
        }
    }
}

/// Constants used by [`log_bar_n`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyConstants {
    /// Exponent `c` in the Euclidean bound `3^((l + c) d)`.
    pub euclid_c: f64,
    /// Override for the poly constant `c_b`; `None` uses [`poly_cb`].
    pub poly_cb: Option<f64>,
}

impl Default for EntropyConstants {
    fn default() -> Self {
        EntropyConstants {
            euclid_c: 1.5,
            poly_cb: None,
        }
    }
}

/// Ratio of the greedy-cover `c_1` to its asymptotic value `3 / ln 2`,
/// measured by [`calibrate_poly_cb`] with the default settings.
pub const POLY_CB_RATIO: f64 = 1.059_351_276_782_648_5;

/// `c_b` in `bar_N_l <= 2^(c_b 3^(l/b))`: the asymptotic value
/// `b 3^(1/b) / ln 2` scaled by the calibrated ratio.
pub fn poly_cb(b: f64) -> f64 {
    POLY_CB_RATIO * b * 3f64.powf(1.0 / b) / std::f64::consts::LN_2
}

/// Constants `(c_gamma, c_1, ln c_0)` of the quadratic exp-ellipsoid bound
/// `ln bar_N_l <= c_gamma (l + c_1)^2 + ln c_0`.
///
/// With `g = ln gamma`, `theta = 1/3`, `k = ln(3 / theta)` and
/// `a = ln(1 / (1 - theta)) / (2 g)`, Dumer's upper bound for the
/// `J_2`-dimensional section gives
/// `ln N_eps <= (L + g + k)^2 / (2g) + a k - k^2 / (2g)` with `L = ln(1/eps)`
/// (bounding the ceilings by `+1`). Covering at `sqrt(2 - theta) eps`
/// and substituting `eps = 3^-(l+1) / sqrt(2 - theta)` yields the values
/// below.
pub fn exp_entropy_constants(gamma: f64) -> (f64, f64, f64) {
    let theta: f64 = 1.0 / 3.0;
    let ln3 = 3f64.ln();
    let g = gamma.ln();
    let k = (3.0 / theta).ln();
    let a = 0.5 * (1.0 / (1.0 - theta)).ln() / g;
    let c_gamma = ln3 * ln3 / (2.0 * g);
    let c1 = 1.0 + (0.5 * (2.0 - theta).ln() + g + k) / ln3;
    let ln_c0 = a * k - k * k / (2.0 * g);
    (c_gamma, c1, ln_c0)
}

/// Natural log of the upper bound on `bar_N_l = N_{3^-(l+1)}(B_0)`.
/// `d` is only used by the Euclidean kind.
pub fn log_bar_n(rho: &RhoFunctional, ell: u32, d: usize, k: &EntropyConstants) -> Result<f64> {
    rho.validate()?;
    let l = ell as f64;
    Ok(match *rho {
        RhoFunctional::Euclidean => {
            if d == 0 {
                return Err(Error::InvalidParameter("dimension must be at least 1".into()));
            }
            (l + k.euclid_c) * d as f64 * 3f64.ln()
        }
        RhoFunctional::Poly { b } => {
            let cb = k.poly_cb.unwrap_or_else(|| poly_cb(b));
            cb * 3f64.powf(l / b) * std::f64::consts::LN_2
        }
        RhoFunctional::Exp { gamma } => {
            let (cg, c1, ln_c0) = exp_entropy_constants(gamma);
            cg * (l + c1) * (l + c1) + ln_c0
        }
    })
}

/// `bar_N_l` with default constants. May be `inf` for large `l`.
pub fn bar_n(rho: &RhoFunctional, ell: u32, d: usize) -> Result<f64> {
    Ok(log_bar_n(rho, ell, d, &EntropyConstants::default())?.exp())
}

/// Lower bound `ln N_eps(B_0) >= (ln(1/eps))^2 / (2 ln gamma)` for the
/// exponential ellipsoid.
pub fn ellipsoid_entropy_lower(gamma: f64, eps: f64) -> Result<f64> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must exceed 1")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must lie in (0, 1]")));
    }
    let l = (1.0 / eps).ln();
    Ok(l * l / (2.0 * gamma.ln()))
}

/// Farthest-point greedy cover of a flat point set (`dim` coordinates per
/// point). Returns center indices in selection order; every point is within
/// `eps` of some center. The first center is point 0.
pub fn greedy_cover(coords: &[f64], dim: usize, eps: f64) -> Vec<usize> {
    let n = if dim == 0 { 0 } else { coords.len() / dim };
    if n == 0 {
        return Vec::new();
    }
    let pt = |i: usize| &coords[i * dim..(i + 1) * dim];
    let eps2 = eps * eps;
    let mut centers = vec![0usize];
    let mut d2: Vec<f64> = (0..n).map(|i| squared_euclidean(pt(i), pt(0))).collect();
    loop {
        let (far, &dmax) = d2
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if dmax <= eps2 {
            return centers;
        }
        centers.push(far);
        let c = pt(far).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = squared_euclidean(pt(i), &c);
            if nd < *d {
                *d = nd;
            }
        }
    }
}

/// Outcome of a greedy packing run.
#[derive(Clone, Debug, PartialEq)]
pub struct Packing {
    pub points: Vec<Point>,
    /// Candidates examined.
    pub draws: u64,
    pub target: usize,
}

impl Packing {
    pub fn complete(&self) -> bool {
        self.points.len() >= self.target
    }

    /// Turns a shortfall into [`Error::BudgetExhausted`].
    pub fn into_result(self) -> Result<Vec<Point>> {
        if self.complete() {
            Ok(self.points)
        } else {
            Err(Error::BudgetExhausted {
                draws: self.draws,
                found: self.points.len(),
                target: self.target,
            })
        }
    }
}

struct Packer {
    dim: usize,
    eps2: f64,
    coords: Vec<f64>,
}

impl Packer {
    fn try_add(&mut self, x: &[f64]) -> bool {
        let ok = self
            .coords
            .chunks_exact(self.dim)
            .all(|c| squared_euclidean(c, x) >= self.eps2);
        if ok {
            self.coords.extend_from_slice(x);
        }
        ok
    }

    fn into_points(self) -> Vec<Point> {
        self.coords
            .chunks_exact(self.dim)
            .map(|c| Point::new(c.to_vec()).expect("finite candidate"))
            .collect()
    }
}

/// Scans `candidates` in order, keeping each one at distance `>= eps` from
/// all kept points, until `target` are kept.
pub fn greedy_packing_from(candidates: &[Point], eps: f64, target: usize) -> Result<Packing> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let dim = candidates.first().map_or(1, Point::dim);
    let mut packer = Packer {
        dim,
        eps2: eps * eps,
        coords: Vec::new(),
    };
    let mut draws = 0u64;
    let mut kept = 0;
    for c in candidates {
        if kept >= target {
            break;
        }
        if c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
        draws += 1;
        if packer.try_add(c.coords()) {
            kept += 1;
        }
    }
    Ok(Packing {
        points: packer.into_points(),
        draws,
        target,
    })
}

/// Default candidate budget for [`greedy_packing_ellipsoid`].
pub const DEFAULT_DRAW_BUDGET: u64 = 1_000_000;

/// Greedy packing of the unit ball of `rho` truncated to `dim` coordinates.
/// Candidates are uniform in the ball, obtained by rejection from the
/// bounding box `prod [-tau_m, tau_m]`; each candidate counts as one draw.
pub fn greedy_packing_ellipsoid(
    rho: &RhoFunctional,
    dim: usize,
    eps: f64,
    target: usize,
    budget: u64,
    seed: u64,
) -> Result<Packing> {
    rho.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let tau: Vec<f64> = (1..=dim).map(|m| rho.tau(m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packer = Packer {
        dim,
        eps2: eps * eps,
        coords: Vec::new(),
    };
    let mut kept = 0;
    let mut draws = 0u64;
    let mut u = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    while kept < target && draws < budget {
        let mut r2 = 0.0;
        for v in u.iter_mut() {
            *v = rng.random_range(-1.0..=1.0);
            r2 += *v * *v;
        }
        if r2 > 1.0 {
            continue;
        }
        draws += 1;
        for m in 0..dim {
            x[m] = tau[m] * u[m];
        }
        if packer.try_add(&x) {
            kept += 1;
        }
    }
    Ok(Packing {
        points: packer.into_points(),
        draws,
        target,
    })
}

/// Uniform draws from the unit ball of `rho` truncated to `dim` coordinates.
pub fn sample_ellipsoid(rho: &RhoFunctional, dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let tau: Vec<f64> = (1..=dim).map(|m| rho.tau(m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * dim);
    let mut u = vec![0.0; dim];
    while out.len() < n * dim {
        let mut r2 = 0.0;
        for v in u.iter_mut() {
            *v = rng.random_range(-1.0..=1.0);
            r2 += *v * *v;
        }
        if r2 <= 1.0 {
            out.extend(u.iter().zip(&tau).map(|(a, t)| a * t));
        }
    }
    out
}

/// Result of [`calibrate_poly_cb`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCalibration {
    /// Greedy cover sizes at `eps = 3^-(l+1)`, `l = 0, 1`.
    pub cover_counts: Vec<usize>,
    /// Smallest `c_1` with `log2(count_l) <= c_1 3^l` for both levels.
    pub c1: f64,
    /// `c1 / (3 / ln 2)`.
    pub ratio: f64,
}

/// Fits `c_b` for `b = 1` from greedy covers of `samples` uniform points of
/// the `dim`-truncated unit ball at the radii of levels 0 and 1.
pub fn calibrate_poly_cb(samples: usize, dim: usize, seed: u64) -> PolyCalibration {
    let rho = RhoFunctional::Poly { b: 1.0 };
    let pts = sample_ellipsoid(&rho, dim, samples, seed);
    let mut counts = Vec::new();
    let mut c1 = 0.0f64;
    for ell in 0..2u32 {
        let eps = 3f64.powi(-(ell as i32 + 1));
        let k = greedy_cover(&pts, dim, eps).len();
        counts.push(k);
        c1 = c1.max((k as f64).log2() / 3f64.powi(ell as i32));
    }
    PolyCalibration {
        cover_counts: counts,
        c1,
        ratio: c1 * std::f64::consts::LN_2 / 3.0,
    }
}

/// Settings behind [`POLY_CB_RATIO`].
pub const POLY_CALIBRATION_SAMPLES: usize = 20_000;
pub const POLY_CALIBRATION_DIM: usize = 12;
pub const POLY_CALIBRATION_SEED: u64 = 2024;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_basics() {
        let x = [3.0, 4.0];
        assert_eq!(RhoFunctional::Euclidean.eval(&x), 5.0);
        let p = RhoFunctional::poly(1.0).unwrap();
        assert!((p.eval(&[0.0, 0.5]) - 1.0).abs() < 1e-15);
        let e = RhoFunctional::exp(2.0).unwrap();
        assert!((e.eval(&[0.0, 0.0, 0.25]) - 1.0).abs() < 1e-15);
        assert!(RhoFunctional::poly(0.5).is_err());
        assert!(RhoFunctional::exp(1.0).is_err());
    }

    #[test]
    fn rho_homogeneous_and_dominating() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rho in [
            RhoFunctional::Euclidean,
            RhoFunctional::Poly { b: 1.3 },
            RhoFunctional::Exp { gamma: 1.7 },
        ] {
            for _ in 0..50 {
                let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a: f64 = rng.random_range(-5.0..5.0);
                let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
                let lhs = rho.eval(&ax);
                assert!((lhs - a.abs() * rho.eval(&x)).abs() <= 1e-12 * lhs.max(1.0));
                assert!(rho.eval(&x) >= crate::measures::norm(&x) - 1e-12);
            }
            for m in 1..40 {
                assert!(rho.tau(m) <= 1.0);
            }
        }
    }

    #[test]
    fn parse_roundtrip() {
        for s in ["euclidean", "poly:b=1", "exp:gamma=2"] {
            let r: RhoFunctional = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("poly".parse::<RhoFunctional>().is_err());
        assert!("cubic:b=1".parse::<RhoFunctional>().is_err());
    }

    #[test]
    fn euclidean_growth_ratio() {
        let k = EntropyConstants::default();
        let a = log_bar_n(&RhoFunctional::Euclidean, 20, 1, &k).unwrap();
        let b = log_bar_n(&RhoFunctional::Euclidean, 21, 1, &k).unwrap();
        assert!(((b - a).exp() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exp_second_difference() {
        let rho = RhoFunctional::Exp { gamma: 2.0 };
        let k = EntropyConstants::default();
        let (cg, _, ln_c0) = exp_entropy_constants(2.0);
        assert!((ln_c0.exp() - 0.0584).abs() < 1e-3);
        for l in 0..10 {
            let f = |l| log_bar_n(&rho, l, 0, &k).unwrap();
            let d2 = f(l + 2) - 2.0 * f(l + 1) + f(l);
            assert!((d2 - 2.0 * cg).abs() < 1e-9);
        }
    }

    #[test]
    fn poly_level_two() {
        let rho = RhoFunctional::Poly { b: 1.0 };
        let k = EntropyConstants::default();
        let log2 = log_bar_n(&rho, 2, 0, &k).unwrap() / std::f64::consts::LN_2;
        assert!((log2 - 9.0 * poly_cb(1.0)).abs() < 1e-9);
    }

    #[test]
    fn bar_n_nondecreasing() {
        let k = EntropyConstants::default();
        for rho in [
            RhoFunctional::Euclidean,
            RhoFunctional::Poly { b: 0.8 },
            RhoFunctional::Poly { b: 2.0 },
            RhoFunctional::Exp { gamma: 1.5 },
            RhoFunctional::Exp { gamma: 4.0 },
        ] {
            let mut prev = f64::NEG_INFINITY;
            for l in 0..12 {
                let v = log_bar_n(&rho, l, 3, &k).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn entropy_lower_values() {
        assert_eq!(ellipsoid_entropy_lower(2.0, 1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((ellipsoid_entropy_lower(e, (-2.0f64).exp()).unwrap() - 2.0).abs() < 1e-14);
        let want = 10f64.ln().powi(2) / (2.0 * 2f64.ln());
        assert!((ellipsoid_entropy_lower(2.0, 0.1).unwrap() - want).abs() < 1e-14);
        assert!(ellipsoid_entropy_lower(2.0, 1.5).is_err());
    }

    #[test]
    fn interval_cover_vs_half_length() {
        let n = 2001;
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        for &eps in &[0.3, 0.1, 0.05, 0.01] {
            let k = greedy_cover(&pts, 1, eps).len() as f64;
            let ideal = (1.0 / (2.0 * eps)).ceil();
            assert!(k <= 3.0 * ideal && k * 3.0 >= ideal, "eps {eps}: {k} vs {ideal}");
        }
    }

    #[test]
    fn cover_is_a_cover() {
        let pts = sample_ellipsoid(&RhoFunctional::Exp { gamma: 2.0 }, 4, 500, 3);
        let centers = greedy_cover(&pts, 4, 0.2);
        for x in pts.chunks(4) {
            let best = centers
                .iter()
                .map(|&c| squared_euclidean(x, &pts[c * 4..c * 4 + 4]).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 0.2);
        }
    }

    #[test]
    fn packing_on_interval() {
        let cands: Vec<Point> = [0.0, 0.2, 1.0, 0.5]
            .iter()
            .map(|&x| Point::new(vec![x]).unwrap())
            .collect();
        let p = greedy_packing_from(&cands, 0.4, 2).unwrap();
        assert!(p.complete());
        assert_eq!(p.points.len(), 2);
        assert_eq!(p.points[1].coords(), &[1.0]);
        let p = greedy_packing_from(&cands, 5.0, 3).unwrap();
        assert_eq!(p.points.len(), 1);
        assert!(matches!(p.into_result(), Err(Error::BudgetExhausted { found: 1, .. })));
    }
}
