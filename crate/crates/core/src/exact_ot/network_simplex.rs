//! Primal network simplex for the dense transportation problem.
//!
//! Nodes are the `m` sources, the `n` sinks and an artificial root. The
//! starting basis joins every node to the root by an artificial arc of cost
//! `ART`. Pricing is block search over the `m * n` real arcs. The leaving arc
//! follows the strongly-feasible-tree rule, which prevents cycling under
//! degeneracy. The basis tree is stored as parent pointers plus child lists;
//! after each pivot only the re-hung subtree has its potentials shifted.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// Positive-flow real arcs as `(source, sink, mass)`.
    pub flows: Vec<(usize, usize, f64)>,
    /// Sum of `mass * cost` over `flows`.
    pub cost: f64,
    /// `sum a_i u_i + sum b_j v_j` for the final basis potentials.
    pub dual_objective: f64,
    /// Smallest reduced cost `c_ij - u_i - v_j` over all real arcs.
    pub min_reduced_cost: f64,
    /// Mass left on artificial arcs (nonzero only for unbalanced input).
    pub artificial_flow: f64,
    pub pivots: usize,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    e: usize,
    root: usize,
    cost: &'a [f64],
    art: f64,
    tol: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    children: Vec<Vec<usize>>,
    pi: Vec<f64>,
    mark: Vec<u32>,
    stamp: u32,
    next_arc: usize,
    block: usize,
    pivots: usize,
}

impl<'a> Simplex<'a> {
    fn new(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let e = m * n;
        let nodes = m + n + 1;
        let root = m + n;
        let max_c = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let art = if max_c > 0.0 {
            max_c * nodes as f64 + max_c
        } else {
            1.0
        };
        let mut s = Simplex {
            m,
            n,
            e,
            root,
            cost,
            art,
            tol: art * 2e-15,
            flow: vec![0.0; e + m + n],
            in_tree: vec![false; e + m + n],
            parent: vec![root; nodes],
            pred: vec![NONE; nodes],
            up: vec![false; nodes],
            children: vec![Vec::new(); nodes],
            pi: vec![0.0; nodes],
            mark: vec![0; nodes],
            stamp: 0,
            next_arc: 0,
            block: ((e as f64).sqrt() as usize).clamp(10.min(e.max(1)), e.max(1)),
            pivots: 0,
        };
        s.parent[root] = NONE;
        for i in 0..m {
            let a = e + i;
            s.flow[a] = supply[i];
            s.in_tree[a] = true;
            s.pred[i] = a;
            s.up[i] = true;
            s.pi[i] = -art;
            s.children[root].push(i);
        }
        for j in 0..n {
            let a = e + m + j;
            s.flow[a] = demand[j];
            s.in_tree[a] = true;
            s.pred[m + j] = a;
            s.up[m + j] = false;
            s.pi[m + j] = art;
            s.children[root].push(m + j);
        }
        s
    }

    #[inline]
    fn ends(&self, a: usize) -> (usize, usize) {
        if a < self.e {
            (a / self.n, self.m + a % self.n)
        } else if a < self.e + self.m {
            (a - self.e, self.root)
        } else {
            (self.root, a - self.e)
        }
    }

    #[inline]
    fn arc_cost(&self, a: usize) -> f64 {
        if a < self.e {
            self.cost[a]
        } else {
            self.art
        }
    }

    /// Block search over real arcs; returns the most negative reduced cost
    /// of the first block that contains an eligible arc.
    fn find_entering(&mut self) -> Option<(usize, f64)> {
        let (m, n, e) = (self.m, self.n, self.e);
        if e == 0 {
            return None;
        }
        let mut a = self.next_arc;
        let mut i = a / n;
        let mut j = a % n;
        let mut best = -self.tol;
        let mut best_arc = NONE;
        let mut in_block = 0;
        for _ in 0..e {
            if !self.in_tree[a] {
                let rc = self.cost[a] + self.pi[i] - self.pi[m + j];
                if rc < best {
                    best = rc;
                    best_arc = a;
                }
            }
            a += 1;
            j += 1;
            if j == n {
                j = 0;
                i += 1;
                if i == m {
                    i = 0;
                    a = 0;
                }
            }
            in_block += 1;
            if in_block == self.block {
                if best_arc != NONE {
                    self.next_arc = a;
                    return Some((best_arc, best));
                }
                in_block = 0;
            }
        }
        if best_arc != NONE {
            self.next_arc = a;
            return Some((best_arc, best));
        }
        None
    }

    fn find_join(&mut self, u: usize, v: usize) -> usize {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.iter_mut().for_each(|x| *x = 0);
            self.stamp = 1;
        }
        let mut x = u;
        loop {
            self.mark[x] = self.stamp;
            if x == self.root {
                break;
            }
            x = self.parent[x];
        }
        let mut y = v;
        while self.mark[y] != self.stamp {
            y = self.parent[y];
        }
        y
    }

    fn remove_child(&mut self, parent: usize, child: usize) {
        let list = &mut self.children[parent];
        let pos = list
            .iter()
            .position(|&c| c == child)
            .expect("tree child lists out of sync");
        list.swap_remove(pos);
    }

    fn pivot(&mut self, in_arc: usize, rc: f64) -> Result<()> {
        let (first, second) = self.ends(in_arc);
        let join = self.find_join(first, second);

        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut u = first;
        while u != join {
            let d = if self.up[u] {
                self.flow[self.pred[u]]
            } else {
                f64::INFINITY
            };
            if d < delta {
                delta = d;
                u_out = u;
                side = 1;
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            let d = if self.up[u] {
                f64::INFINITY
            } else {
                self.flow[self.pred[u]]
            };
            if d <= delta {
                delta = d;
                u_out = u;
                side = 2;
            }
            u = self.parent[u];
        }
        if side == 0 {
            return Err(Error::Solver("unbounded pivot cycle".into()));
        }

        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut u = first;
            while u != join {
                let a = self.pred[u];
                if self.up[u] {
                    self.flow[a] -= delta;
                } else {
                    self.flow[a] += delta;
                }
                u = self.parent[u];
            }
            u = second;
            while u != join {
                let a = self.pred[u];
                if self.up[u] {
                    self.flow[a] += delta;
                } else {
                    self.flow[a] -= delta;
                }
                u = self.parent[u];
            }
        }
        let out_arc = self.pred[u_out];
        self.flow[out_arc] = 0.0;
        self.in_tree[out_arc] = false;

        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };

        // Cut the subtree rooted at u_out and re-root it at u_in.
        let old_parent = self.parent[u_out];
        self.remove_child(old_parent, u_out);
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        let saved: Vec<(usize, bool)> = path.iter().map(|&w| (self.pred[w], self.up[w])).collect();
        for t in 1..path.len() {
            let child = path[t - 1];
            let par = path[t];
            self.remove_child(par, child);
            self.children[child].push(par);
            self.parent[par] = child;
            self.pred[par] = saved[t - 1].0;
            self.up[par] = !saved[t - 1].1;
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = in_arc;
        self.up[u_in] = u_in == first;
        self.children[v_in].push(u_in);
        self.in_tree[in_arc] = true;

        let sigma = if u_in == second { rc } else { -rc };
        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            self.pi[x] += sigma;
            stack.extend_from_slice(&self.children[x]);
        }
        self.pivots += 1;
        Ok(())
    }

    /// Recomputes all potentials from the tree. Returns, per node, the local
    /// potential relative to the top of its root subtree and that top node.
    fn recompute_potentials(&mut self) -> (Vec<f64>, Vec<usize>) {
        let nodes = self.m + self.n + 1;
        let mut local = vec![0.0; nodes];
        let mut comp = vec![NONE; nodes];
        self.pi[self.root] = 0.0;
        let tops = self.children[self.root].clone();
        for top in tops {
            let a = self.pred[top];
            let c = self.arc_cost(a);
            self.pi[top] = if self.up[top] { -c } else { c };
            local[top] = 0.0;
            comp[top] = top;
            let mut stack: Vec<usize> = self.children[top].clone();
            while let Some(x) = stack.pop() {
                let p = self.parent[x];
                let c = self.arc_cost(self.pred[x]);
                let (dl, dg) = if self.up[x] {
                    (local[p] - c, self.pi[p] - c)
                } else {
                    (local[p] + c, self.pi[p] + c)
                };
                local[x] = dl;
                self.pi[x] = dg;
                comp[x] = top;
                stack.extend_from_slice(&self.children[x]);
            }
        }
        (local, comp)
    }

    fn run(&mut self) -> Result<()> {
        let max_pivots = 50 * (self.e + self.m + self.n) + 10_000;
        loop {
            let mut since_refresh = 0;
            while let Some((a, rc)) = self.find_entering() {
                self.pivot(a, rc)?;
                since_refresh += 1;
                if since_refresh == 2000 {
                    self.recompute_potentials();
                    since_refresh = 0;
                }
                if self.pivots > max_pivots {
                    return Err(Error::Solver(format!(
                        "pivot limit {max_pivots} exceeded"
                    )));
                }
            }
            self.recompute_potentials();
            if self.find_entering().is_none() {
                return Ok(());
            }
        }
    }
}

/// Solves `min sum c_ij x_ij` subject to row sums `supply` and column sums
/// `demand`, with `cost` stored row-major (`m x n`). All supplies and
/// demands must be positive and the two totals equal.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if cost.len() != m * n {
        return Err(Error::InvalidParameter(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            m * n
        )));
    }
    if supply.iter().chain(demand).any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights("supplies and demands must be positive".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("transport cost".into()));
    }
    let mut s = Simplex::new(supply, demand, cost);
    s.run()?;
    let (local, comp) = s.recompute_potentials();

    let mut flows = Vec::new();
    let mut artificial_flow = 0.0;
    for x in 0..m + n {
        let a = s.pred[x];
        if a < s.e {
            if s.flow[a] > 0.0 {
                flows.push((a / n, a % n, s.flow[a]));
            }
        } else {
            artificial_flow += s.flow[a];
        }
    }
    flows.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let total: f64 = flows.iter().map(|&(i, j, f)| f * cost[i * n + j]).sum();

    let mut dual = 0.0;
    for (i, &a) in supply.iter().enumerate() {
        dual -= a * local[i];
    }
    for (j, &b) in demand.iter().enumerate() {
        dual += b * local[m + j];
    }
    let mut min_rc = f64::INFINITY;
    for i in 0..m {
        for j in 0..n {
            let c = cost[i * n + j];
            let rc = if comp[i] == comp[m + j] {
                c + local[i] - local[m + j]
            } else {
                c + s.pi[i] - s.pi[m + j]
            };
            min_rc = min_rc.min(rc);
        }
    }
    Ok(TransportSolution {
        flows,
        cost: total,
        dual_objective: dual,
        min_reduced_cost: min_rc,
        artificial_flow,
        pivots: s.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn check_marginals(sol: &TransportSolution, a: &[f64], b: &[f64]) {
        let mut rows = vec![0.0; a.len()];
        let mut cols = vec![0.0; b.len()];
        for &(i, j, f) in &sol.flows {
            assert!(f > 0.0);
            rows[i] += f;
            cols[j] += f;
        }
        for (x, y) in rows.iter().zip(a) {
            assert!((x - y).abs() < 1e-12, "row {x} vs {y}");
        }
        for (x, y) in cols.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "col {x} vs {y}");
        }
    }

    #[test]
    fn single_source() {
        let sol = solve(&[1.0], &[0.25, 0.75], &[2.0, 4.0]).unwrap();
        assert!((sol.cost - 3.5).abs() < 1e-15);
        check_marginals(&sol, &[1.0], &[0.25, 0.75]);
    }

    #[test]
    fn small_known_instance() {
        let a = [0.3, 0.3, 0.4];
        let b = [0.5, 0.2, 0.3];
        let c = [
            1.0, 2.0, 3.0, //
            4.0, 1.0, 2.0, //
            2.0, 3.0, 1.0,
        ];
        let sol = solve(&a, &b, &c).unwrap();
        check_marginals(&sol, &a, &b);
        // Optimum 1.3: 0.3 on (0,0), 0.2 on (2,0), 0.2 on (2,2), 0.2 on (1,1), 0.1 on (1,2).
        assert!((sol.cost - 1.3).abs() < 1e-12, "{}", sol.cost);
        assert!((sol.cost - sol.dual_objective).abs() < 1e-12);
        assert!(sol.min_reduced_cost > -1e-12);
    }

    #[test]
    fn equal_weight_matches_assignment() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for &n in &[2usize, 5, 17, 60] {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let w = vec![1.0 / n as f64; n];
            let sol = solve(&w, &w, &cost).unwrap();
            check_marginals(&sol, &w, &w);
            let asg = super::super::assignment::solve(n, &cost);
            let opt: f64 = (0..n).map(|i| cost[i * n + asg.row_to_col[i]]).sum::<f64>() / n as f64;
            assert!((sol.cost - opt).abs() < 1e-12, "{} vs {opt}", sol.cost);
        }
    }

    #[test]
    fn random_rectangular_instances_are_certified() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let m = rng.random_range(1..25);
            let n = rng.random_range(1..25);
            let mut a: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            a.iter_mut().for_each(|x| *x /= sa);
            b.iter_mut().for_each(|x| *x *= 1.0 / sb);
            let c: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>() * 3.0).collect();
            let sol = solve(&a, &b, &c).unwrap();
            let mut rows = vec![0.0; m];
            let mut cols = vec![0.0; n];
            for &(i, j, f) in &sol.flows {
                rows[i] += f;
                cols[j] += f;
            }
            for (x, y) in rows.iter().zip(&a) {
                assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in cols.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((sol.cost - sol.dual_objective).abs() <= 1e-12 * (1.0 + sol.cost));
            assert!(sol.min_reduced_cost >= -1e-12);
        }
    }

    #[test]
    fn integer_degenerate_instance() {
        let n = 12;
        let w = vec![1.0 / n as f64; n];
        let c: Vec<f64> = (0..n * n).map(|k| ((k * 7) % 3) as f64).collect();
        let sol = solve(&w, &w, &c).unwrap();
        let asg = super::super::assignment::solve(n, &c);
        let opt: f64 = (0..n).map(|i| c[i * n + asg.row_to_col[i]]).sum::<f64>() / n as f64;
        assert!((sol.cost - opt).abs() < 1e-12);
    }
}
