//! Dense linear assignment by shortest augmenting paths (Jonker-Volgenant):
//! column reduction, reduction transfer, two rounds of augmenting row
//! reduction, then Dijkstra-style augmentation for the remaining free rows.

/// Optimal assignment of `n` rows to `n` columns for a row-major cost matrix.
#[derive(Clone, Debug)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Row duals `u` with `u[i] + v[row_to_col[i]] == cost[i][row_to_col[i]]`.
    pub u: Vec<f64>,
    /// Column duals.
    pub v: Vec<f64>,
}

const NONE: usize = usize::MAX;
/// Row-reduction steps allowed per round, in multiples of `n`. Long
/// reduction chains with tiny price moves are left to the augmentation phase.
const ARR_BUDGET: usize = 1;

pub fn solve(n: usize, cost: &[f64]) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Assignment {
            row_to_col: vec![],
            u: vec![],
            v: vec![],
        };
    }
    let c = |i: usize, j: usize| cost[i * n + j];

    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut v = vec![0.0f64; n];
    let mut matches = vec![0u32; n];

    // Column reduction, scanning columns in reverse.
    for j in (0..n).rev() {
        let mut min = c(0, j);
        let mut imin = 0;
        for i in 1..n {
            let h = c(i, j);
            if h < min {
                min = h;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else if v[j] < v[rowsol[imin]] {
            let j1 = rowsol[imin];
            rowsol[imin] = j;
            colsol[j] = imin;
            colsol[j1] = NONE;
        } else {
            colsol[j] = NONE;
        }
    }

    // Reduction transfer.
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        match matches[i] {
            0 => free.push(i),
            1 => {
                let j1 = rowsol[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        let h = c(i, j) - v[j];
                        if h < min {
                            min = h;
                        }
                    }
                }
                if min.is_finite() {
                    v[j1] -= min;
                }
            }
            _ => {}
        }
    }
    // Augmenting row reduction.
    for _ in 0..2 {
        let prev = std::mem::take(&mut free);
        let mut queue = prev;
        let mut k = 0;
        let mut steps = 0usize;
        while k < queue.len() {
            let i = queue[k];
            k += 1;
            steps += 1;
            let mut umin = c(i, 0) - v[0];
            let mut j1 = 0;
            let mut j2 = NONE;
            let mut usubmin = f64::INFINITY;
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            let strict = usubmin - umin > 1e-14 * (1.0 + umin.abs());
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE && j2 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            if rowsol[i] != NONE && colsol[rowsol[i]] == i {
                colsol[rowsol[i]] = NONE;
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                rowsol[i0] = NONE;
                if strict && steps < ARR_BUDGET * n {
                    // Reprocess the displaced row immediately.
                    k -= 1;
                    queue[k] = i0;
                } else {
                    free.push(i0);
                }
            }
        }
    }

    // Augmentation.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        for j in 0..n {
            d[j] = c(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let mut low = 0usize;
        let mut up = 0usize;
        let mut min = 0.0f64;
        let endofpath;
        'search: loop {
            if up == low {
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break 'search;
                    }
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = colsol[j1];
            let h = c(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = c(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    if v2 <= min {
                        if colsol[j] == NONE {
                            endofpath = j;
                            // Columns in collist[..low] are finalised.
                            d[j] = v2;
                            break 'search;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                    d[j] = v2;
                }
                k += 1;
            }
        }
        // Price update for the columns scanned before this augmentation.
        for &j1 in &collist[..low] {
            v[j1] += d[j1] - min;
        }
        let mut j = endofpath;
        loop {
            let i = pred[j];
            colsol[j] = i;
            let next = rowsol[i];
            rowsol[i] = j;
            if i == freerow {
                break;
            }
            j = next;
        }
    }

    let u: Vec<f64> = (0..n).map(|i| c(i, rowsol[i]) - v[rowsol[i]]).collect();
    Assignment {
        row_to_col: rowsol,
        u,
        v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(n: usize, cost: &[f64]) -> f64 {
        fn rec(i: usize, n: usize, used: &mut Vec<bool>, cost: &[f64], acc: f64, best: &mut f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, n, used, cost, acc + cost[i * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, n, &mut vec![false; n], cost, 0.0, &mut best);
        best
    }

    fn check(n: usize, cost: &[f64]) -> f64 {
        let a = solve(n, cost);
        let mut seen = vec![false; n];
        for &j in &a.row_to_col {
            assert!(!seen[j], "column assigned twice");
            seen[j] = true;
        }
        for i in 0..n {
            for j in 0..n {
                let rc = cost[i * n + j] - a.u[i] - a.v[j];
                assert!(rc >= -1e-9, "negative reduced cost {rc}");
            }
        }
        (0..n).map(|i| cost[i * n + a.row_to_col[i]]).sum()
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..40 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
                let got = check(n, &cost);
                assert!((got - brute(n, &cost)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integer_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in 2..=7 {
            for _ in 0..40 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..3) as f64).collect();
                let got = check(n, &cost);
                assert_eq!(got, brute(n, &cost));
            }
        }
    }

    #[test]
    fn constant_matrix() {
        let n = 20;
        let cost = vec![1.0; n * n];
        assert_eq!(check(n, &cost), n as f64);
    }

    #[test]
    fn larger_instance_is_dual_feasible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        check(n, &cost);
    }
}
