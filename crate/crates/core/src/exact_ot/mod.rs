//! Exact Wasserstein-p distances between discrete measures.
//!
//! Equal-weight problems with the same atom count go to a dense assignment
//! solver; everything else goes to the transportation simplex. Both return
//! dual potentials, which are used to certify optimality.

pub mod assignment;
pub mod network_simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{squared_euclidean, DiscreteMeasure};

/// Marginal feasibility tolerance for coupling plans.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Relative tolerance on the primal-dual gap.
pub const GAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Sparse transport plan between two discrete measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingPlan {
    pub edges: Vec<Edge>,
    /// `sum mass * |x - y|^p` over the edges.
    pub total_cost_p: f64,
    pub order_p: f64,
}

impl CouplingPlan {
    /// Builds a plan and computes its cost against the given atoms.
    pub fn new(edges: Vec<Edge>, mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Self {
        let mut plan = CouplingPlan {
            edges,
            total_cost_p: 0.0,
            order_p: p,
        };
        plan.total_cost_p = plan.recompute_cost(mu, nu);
        plan
    }

    pub fn recompute_cost(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        self.edges
            .iter()
            .map(|e| e.mass * cost_p(mu.point(e.source), nu.point(e.target), self.order_p))
            .sum()
    }

    /// `total_cost_p^(1/p)`.
    pub fn distance(&self) -> f64 {
        self.total_cost_p.max(0.0).powf(1.0 / self.order_p)
    }

    pub fn total_mass(&self) -> f64 {
        self.edges.iter().map(|e| e.mass).sum()
    }

    pub fn row_sums(&self, m: usize) -> Vec<f64> {
        let mut r = vec![0.0; m];
        for e in &self.edges {
            r[e.source] += e.mass;
        }
        r
    }

    pub fn col_sums(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for e in &self.edges {
            c[e.target] += e.mass;
        }
        c
    }

    /// Mass moved between atoms at different locations.
    pub fn off_diagonal_mass(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        self.edges
            .iter()
            .filter(|e| mu.point(e.source) != nu.point(e.target))
            .map(|e| e.mass)
            .sum()
    }

    /// Checks nonnegativity, index bounds, marginals (absolute `tol`) and that
    /// the stored cost matches a recomputation (relative `tol`).
    pub fn check(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<()> {
        for e in &self.edges {
            if e.source >= mu.len() || e.target >= nu.len() {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) out of range",
                    e.source, e.target
                )));
            }
            if !(e.mass >= 0.0) {
                return Err(Error::InvalidWeights(format!("edge mass {}", e.mass)));
            }
        }
        for (i, (r, w)) in self.row_sums(mu.len()).iter().zip(mu.weights()).enumerate() {
            if (r - w).abs() > tol {
                return Err(Error::InvalidWeights(format!(
                    "source marginal {i}: plan has {r}, measure has {w}"
                )));
            }
        }
        for (j, (c, w)) in self.col_sums(nu.len()).iter().zip(nu.weights()).enumerate() {
            if (c - w).abs() > tol {
                return Err(Error::InvalidWeights(format!(
                    "target marginal {j}: plan has {c}, measure has {w}"
                )));
            }
        }
        let again = self.recompute_cost(mu, nu);
        if (again - self.total_cost_p).abs() > tol * again.abs().max(1e-300) + 1e-300 {
            return Err(Error::Solver(format!(
                "stored cost {} differs from recomputed {again}",
                self.total_cost_p
            )));
        }
        Ok(())
    }
}

/// Duality-based optimality evidence for a solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    /// `|primal - dual| / max(primal, max cost)`.
    pub relative_gap: f64,
    /// Smallest `c_ij - u_i - v_j`; nonnegative up to rounding when the duals
    /// are feasible.
    pub min_reduced_cost: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub distance: f64,
    pub plan: CouplingPlan,
    pub certificate: Certificate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Assignment for equal-weight square problems, simplex otherwise.
    #[default]
    Auto,
    Assignment,
    NetworkSimplex,
}

/// `|a - b|^p` with fast paths for `p = 1` and `p = 2`.
#[inline]
pub fn cost_p(a: &[f64], b: &[f64], p: f64) -> f64 {
    pow_from_squared(squared_euclidean(a, b), p)
}

#[inline]
pub fn pow_from_squared(sq: f64, p: f64) -> f64 {
    if p == 1.0 {
        sq.sqrt()
    } else if p == 2.0 {
        sq
    } else {
        sq.powf(0.5 * p)
    }
}

/// Row-major `|x_i - y_j|^p`.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for x in mu.points() {
        for y in nu.points() {
            c.push(cost_p(x, y, p));
        }
    }
    c
}

fn validate(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 1")));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > MARGINAL_TOL {
        return Err(Error::MassMismatch { left: a, right: b });
    }
    if !(a > 0.0) {
        return Err(Error::Empty("measure has no mass"));
    }
    Ok(())
}

/// Exact `W_p(mu, nu)` with an optimal plan, using the automatic solver.
pub fn solve_wp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<Solution> {
    solve_wp_with(mu, nu, p, Solver::Auto)
}

pub fn solve_wp_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    solver: Solver,
) -> Result<Solution> {
    validate(mu, nu, p)?;
    let (mu_r, mu_idx) = mu.drop_zero_weights();
    let (nu_r, nu_idx) = nu.drop_zero_weights();
    // Absorb the (at most 1e-9) mass difference into the target.
    let nu_r = nu_r.reweighted(mu_r.total_mass() / nu_r.total_mass());
    let (m, n) = (mu_r.len(), nu_r.len());
    let cost = cost_matrix(&mu_r, &nu_r, p);
    let max_c = cost.iter().fold(0.0f64, |a, &c| a.max(c));

    let equal = m == n && {
        let w = mu_r.weight(0);
        let close = |x: f64| (x - w).abs() <= 1e-12 * w;
        mu_r.weights().iter().chain(nu_r.weights()).all(|&x| close(x))
    };
    let use_assignment = match solver {
        Solver::Auto => equal,
        Solver::Assignment => {
            if !equal {
                return Err(Error::InvalidParameter(
                    "assignment solver needs equal weights and equal atom counts".into(),
                ));
            }
            true
        }
        Solver::NetworkSimplex => false,
    };

    let (edges, dual, min_rc) = if use_assignment {
        let w = mu_r.weight(0);
        let a = assignment::solve(n, &cost);
        let edges: Vec<Edge> = (0..n)
            .map(|i| Edge {
                source: mu_idx[i],
                target: nu_idx[a.row_to_col[i]],
                mass: w,
            })
            .collect();
        let dual = w * (a.u.iter().sum::<f64>() + a.v.iter().sum::<f64>());
        let mut min_rc = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                min_rc = min_rc.min(cost[i * n + j] - a.u[i] - a.v[j]);
            }
        }
        (edges, dual, min_rc)
    } else {
        let sol = network_simplex::solve(mu_r.weights(), nu_r.weights(), &cost)?;
        if sol.artificial_flow > MARGINAL_TOL {
            return Err(Error::Solver(format!(
                "{} mass left on artificial arcs",
                sol.artificial_flow
            )));
        }
        let edges = sol
            .flows
            .iter()
            .map(|&(i, j, f)| Edge {
                source: mu_idx[i],
                target: nu_idx[j],
                mass: f,
            })
            .collect();
        (edges, sol.dual_objective, sol.min_reduced_cost)
    };

    let plan = CouplingPlan::new(edges, mu, nu, p);
    let primal = plan.total_cost_p;
    let scale = primal.abs().max(max_c).max(f64::MIN_POSITIVE);
    let certificate = Certificate {
        primal,
        dual,
        relative_gap: (primal - dual).abs() / scale,
        min_reduced_cost: min_rc,
    };
    if certificate.relative_gap > GAP_TOL || min_rc < -GAP_TOL * scale {
        return Err(Error::Solver(format!(
            "optimality not certified: gap {:.3e}, min reduced cost {:.3e}",
            certificate.relative_gap, min_rc
        )));
    }
    Ok(Solution {
        distance: plan.distance(),
        plan,
        certificate,
    })
}

/// Exhaustive minimum over all permutations. Only for equal-weight measures
/// with the same atom count `n <= 8`.
pub fn brute_force_wp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    validate(mu, nu, p)?;
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::InvalidWeights(format!(
            "atom counts differ: {n} vs {}",
            nu.len()
        )));
    }
    if n > 8 {
        return Err(Error::TooLarge(n));
    }
    let uniform = |m: &DiscreteMeasure| {
        let w = m.total_mass() / n as f64;
        m.weights().iter().all(|x| (x - w).abs() <= 1e-12)
    };
    if !uniform(mu) || !uniform(nu) {
        return Err(Error::InvalidWeights("brute force needs equal weights".into()));
    }
    let cost = cost_matrix(mu, nu, p);
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| -> f64 { (0..n).map(|i| cost[i * n + perm[i]]).sum() };
    let mut best = eval(&perm);
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((mu.total_mass() * best / n as f64).powf(1.0 / p))
}
