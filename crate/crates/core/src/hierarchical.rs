//! Nested partitions built from coverings, blurred measures, the diagonal
//! plus product coupling between cell-proportional measures, the multiscale
//! (Markov chain) transport, the telescope transport for unbounded supports,
//! and evaluation of the general upper bound on `E W_p^p`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::covering::{greedy_cover, RhoFunctional};
use crate::error::{Error, Result};
use crate::exact_ot::{CouplingPlan, Edge};
use crate::measures::{squared_euclidean, telescope_split, DiscreteMeasure};
use crate::par::{try_map_indexed, Execution};

/// Absolute tolerance for cell-mass identities along the chain.
pub const CHAIN_TOL: f64 = 1e-12;

/// `max(2^(p-1) (1 + 3^p), 2^p)`.
pub fn chain_constant(p: f64) -> f64 {
    (2f64.powf(p - 1.0) * (1.0 + 3f64.powf(p))).max(2f64.powf(p))
}

/// Closed ball containing the support; level 0 of a tree is this ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BaseBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ball center".into()));
        }
        Ok(BaseBall { center, radius })
    }

    /// Unit ball at the origin.
    pub fn unit(dim: usize) -> Self {
        BaseBall {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    /// Ball around the midpoint of the bounding box that contains every atom.
    pub fn enclosing(mu: &DiscreteMeasure) -> Self {
        let d = mu.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in mu.points() {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if mu.is_empty() {
            return BaseBall::unit(d);
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let r = mu
            .points()
            .map(|p| squared_euclidean(p, &center).sqrt())
            .fold(0.0f64, f64::max);
        BaseBall {
            center,
            radius: if r > 0.0 { r } else { 1.0 },
        }
    }
}

/// Cells of a partition of `0..n`, in the order their centers were listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub cells: Vec<Vec<usize>>,
    pub cell_of: Vec<usize>,
}

/// Assigns each point to the first center within `eps` (the set-difference
/// construction `F_i = B(c_i, eps) \ (F_1 u ... u F_{i-1})`). Empty cells
/// are dropped.
pub fn partition_from_covering(
    coords: &[f64],
    dim: usize,
    centers: &[Vec<f64>],
    eps: f64,
) -> Result<Partition> {
    let n = if dim == 0 { 0 } else { coords.len() / dim };
    let eps2 = eps * eps;
    let mut label = Vec::with_capacity(n);
    for i in 0..n {
        let x = &coords[i * dim..(i + 1) * dim];
        let mut hit = None;
        let mut nearest = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            if center.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: center.len(),
                });
            }
            let d2 = squared_euclidean(x, center);
            if d2 <= eps2 {
                hit = Some(c);
                break;
            }
            nearest = nearest.min(d2);
        }
        match hit {
            Some(c) => label.push(c),
            None => {
                return Err(Error::NotACover {
                    point: i,
                    distance: nearest.sqrt(),
                    eps,
                })
            }
        }
    }
    Ok(relabel(&label))
}

/// Turns arbitrary sortable labels into a partition whose cells are ordered
/// by label.
fn relabel<K: Ord + Clone>(label: &[K]) -> Partition {
    let keys: std::collections::BTreeSet<K> = label.iter().cloned().collect();
    let rank: BTreeMap<K, usize> = keys.into_iter().enumerate().map(|(r, k)| (k, r)).collect();
    let mut cells = vec![Vec::new(); rank.len()];
    let mut cell_of = Vec::with_capacity(label.len());
    for (i, k) in label.iter().enumerate() {
        let c = rank[k];
        cells[c].push(i);
        cell_of.push(c);
    }
    Partition { cells, cell_of }
}

/// Supplies covering centers for a point set at a given radius.
pub trait CoveringOracle {
    fn centers(&mut self, coords: &[f64], dim: usize, radius: f64) -> Result<Vec<Vec<f64>>>;
}

/// Farthest-point greedy cover of the points themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyOracle;

impl CoveringOracle for GreedyOracle {
    fn centers(&mut self, coords: &[f64], dim: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
        Ok(greedy_cover(coords, dim, radius)
            .into_iter()
            .map(|i| coords[i * dim..(i + 1) * dim].to_vec())
            .collect())
    }
}

/// Regular grid over an axis-aligned box, fine enough that every point of
/// the box is within `radius` of a grid node.
#[derive(Clone, Debug)]
pub struct GridOracle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoveringOracle for GridOracle {
    fn centers(&mut self, _coords: &[f64], dim: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
        grid_centers(&self.lo, &self.hi, dim, radius)
    }
}

/// Cell centers of a grid with spacing `h = 2 radius / sqrt(dim)` covering
/// the box `[lo, hi]`.
pub fn grid_centers(lo: &[f64], hi: &[f64], dim: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
    if lo.len() != dim || hi.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: lo.len().min(hi.len()),
        });
    }
    let h = 2.0 * radius / (dim as f64).sqrt();
    let counts: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (((b - a) / h).ceil() as usize).max(1))
        .collect();
    let total: usize = counts.iter().product();
    if total > 50_000_000 {
        return Err(Error::TooLarge(total));
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        out.push(
            (0..dim)
                .map(|k| (lo[k] + (idx[k] as f64 + 0.5) * h).min(hi[k]))
                .collect(),
        );
        for k in 0..dim {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeLevel {
    pub cells: Vec<Vec<usize>>,
    pub cell_of: Vec<usize>,
    /// Index of the containing cell one level up (empty at level 0).
    pub parent: Vec<usize>,
    /// `2 * 3^-l * radius`.
    pub diameter_bound: f64,
}

/// Nested partitions `A_0, ..., A_{l*}` of a finite point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub base: BaseBall,
    pub levels: Vec<TreeLevel>,
    pub num_points: usize,
}

impl PartitionTree {
    pub fn ell_star(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.cells.len()).collect()
    }

    /// Checks the partition, nesting and diameter invariants against the
    /// actual coordinates (pairwise scan inside each cell).
    pub fn verify(&self, coords: &[f64], dim: usize) -> Result<()> {
        let n = self.num_points;
        for (l, level) in self.levels.iter().enumerate() {
            if level.cell_of.len() != n {
                return Err(Error::Solver(format!("level {l}: cell map has wrong length")));
            }
            let mut seen = vec![false; n];
            for (c, cell) in level.cells.iter().enumerate() {
                for &i in cell {
                    if seen[i] || level.cell_of[i] != c {
                        return Err(Error::Solver(format!("level {l}: cells overlap at point {i}")));
                    }
                    seen[i] = true;
                }
                let lim = level.diameter_bound * (1.0 + 1e-12);
                for (a, &i) in cell.iter().enumerate() {
                    for &j in &cell[a + 1..] {
                        let d = squared_euclidean(
                            &coords[i * dim..(i + 1) * dim],
                            &coords[j * dim..(j + 1) * dim],
                        )
                        .sqrt();
                        if d > lim {
                            return Err(Error::Solver(format!(
                                "level {l}: cell {c} has diameter {d} > {}",
                                level.diameter_bound
                            )));
                        }
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Solver(format!("level {l}: cells do not cover all points")));
            }
            if l > 0 {
                let up = &self.levels[l - 1];
                for (c, cell) in level.cells.iter().enumerate() {
                    if cell.iter().any(|&i| up.cell_of[i] != level.parent[c]) {
                        return Err(Error::Solver(format!("level {l}: cell {c} is not nested")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds `A_0 = {base}` and, for `l >= 1`, `A_l` as the intersections of
/// `A_{l-1}` with the first-center-wins cells of a cover at radius
/// `3^-l * radius`. Every level-`l` cell lies in a ball of that radius, so
/// its diameter is at most `2 * 3^-l * radius`.
pub fn build_nested_tree(
    coords: &[f64],
    dim: usize,
    base: &BaseBall,
    ell_star: usize,
    oracle: &mut dyn CoveringOracle,
) -> Result<PartitionTree> {
    if base.center.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: base.center.len(),
        });
    }
    let n = coords.len() / dim.max(1);
    for i in 0..n {
        let d = squared_euclidean(&coords[i * dim..(i + 1) * dim], &base.center).sqrt();
        if d > base.radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBaseCell {
                point: i,
                distance: d,
                radius: base.radius,
            });
        }
    }
    let mut levels = vec![TreeLevel {
        cells: if n > 0 { vec![(0..n).collect()] } else { Vec::new() },
        cell_of: vec![0; n],
        parent: Vec::new(),
        diameter_bound: 2.0 * base.radius,
    }];
    for l in 1..=ell_star {
        let radius = base.radius * 3f64.powi(-(l as i32));
        let centers = oracle.centers(coords, dim, radius)?;
        let cover = partition_from_covering(coords, dim, &centers, radius)?;
        let prev = levels.last().unwrap();
        let keys: Vec<(usize, usize)> = (0..n).map(|i| (prev.cell_of[i], cover.cell_of[i])).collect();
        let part = relabel(&keys);
        let parent = part.cells.iter().map(|c| prev.cell_of[c[0]]).collect();
        levels.push(TreeLevel {
            cells: part.cells,
            cell_of: part.cell_of,
            parent,
            diameter_bound: 2.0 * radius,
        });
    }
    Ok(PartitionTree {
        base: base.clone(),
        levels,
        num_points: n,
    })
}

/// Greedy-cover tree on the atoms of `mu`.
pub fn greedy_tree(mu: &DiscreteMeasure, base: &BaseBall, ell_star: usize) -> Result<PartitionTree> {
    build_nested_tree(mu.coords(), mu.dim(), base, ell_star, &mut GreedyOracle)
}

/// Expresses `nuhat` as weights on the atoms of `mu`. Atoms are matched by
/// exact coordinates; when several atoms of `mu` share a location the mass
/// is split in proportion to their `mu` weights.
#[derive(Clone, Debug)]
pub struct SupportMap {
    pub nu_on_mu: Vec<f64>,
    /// For each atom of `mu`, the atoms of `nuhat` sitting on it with the
    /// mass each contributes.
    pub pieces: Vec<Vec<(usize, f64)>>,
}

pub fn map_onto_support(mu: &DiscreteMeasure, nuhat: &DiscreteMeasure) -> Result<SupportMap> {
    if mu.dim() != nuhat.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nuhat.dim(),
        });
    }
    let key = |p: &[f64]| -> Vec<u64> { p.iter().map(|x| (x + 0.0).to_bits()).collect() };
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for (i, p) in mu.points().enumerate() {
        groups.entry(key(p)).or_default().push(i);
    }
    let mut nu_on_mu = vec![0.0; mu.len()];
    let mut pieces = vec![Vec::new(); mu.len()];
    for (t, p) in nuhat.points().enumerate() {
        let w = nuhat.weight(t);
        if w == 0.0 {
            continue;
        }
        let g = groups.get(&key(p)).ok_or_else(|| {
            Error::NotAbsolutelyContinuous(format!("atom {t} of the target is not an atom of the source"))
        })?;
        let gm: f64 = g.iter().map(|&i| mu.weight(i)).sum();
        if !(gm > 0.0) {
            return Err(Error::NotAbsolutelyContinuous(format!(
                "atom {t} of the target sits on zero source mass"
            )));
        }
        for &i in g {
            let share = w * mu.weight(i) / gm;
            if share > 0.0 {
                nu_on_mu[i] += share;
                pieces[i].push((t, share));
            }
        }
    }
    Ok(SupportMap { nu_on_mu, pieces })
}

fn cell_masses(w: &[f64], cells: &[Vec<usize>]) -> Vec<f64> {
    cells.iter().map(|c| c.iter().map(|&i| w[i]).sum()).collect()
}

/// `mu` reweighted cell by cell so that cell `F` carries `target[F]`, with
/// the shape of `mu` inside each cell. Cells where `mu` has no mass get
/// nothing; positive target mass there is an error.
pub fn blur_weights(mu: &[f64], cells: &[Vec<usize>], target: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mu.len()];
    for (c, cell) in cells.iter().enumerate() {
        let m: f64 = cell.iter().map(|&i| mu[i]).sum();
        if m > 0.0 {
            let r = target[c] / m;
            for &i in cell {
                out[i] = mu[i] * r;
            }
        } else if target[c] > 0.0 {
            return Err(Error::NotAbsolutelyContinuous(format!(
                "cell {c} has target mass {} but no source mass",
                target[c]
            )));
        }
    }
    Ok(out)
}

/// The blurred version of `mu` at the given cells: cell masses of `nuhat`,
/// shape of `mu`. `nuhat` must live on atoms of `mu`.
pub fn blurred_measure(
    mu: &DiscreteMeasure,
    nuhat: &DiscreteMeasure,
    cells: &[Vec<usize>],
) -> Result<DiscreteMeasure> {
    let map = map_onto_support(mu, nuhat)?;
    let target = cell_masses(&map.nu_on_mu, cells);
    mu.with_weights(blur_weights(mu.weights(), cells, &target)?)
}

/// Sparse transition kernel on atom indices.
type Kernel = Vec<Vec<(usize, f64)>>;

/// Diagonal-plus-product transition from `a` to `b` inside each group of
/// atoms: keep `min(a, b)` in place and spread the excess
/// `(a - b)_+` over the deficit `(b - a)_+` in proportion. Requires
/// `a(G) = b(G)` for every group.
fn dss_kernel(a: &[f64], b: &[f64], groups: &[Vec<usize>]) -> Kernel {
    let mut k: Kernel = vec![Vec::new(); a.len()];
    for g in groups {
        let deficit: Vec<(usize, f64)> = g
            .iter()
            .filter_map(|&i| {
                let d = b[i] - a[i];
                (d > 0.0).then_some((i, d))
            })
            .collect();
        let delta: f64 = deficit.iter().map(|x| x.1).sum();
        for &i in g {
            if !(a[i] > 0.0) {
                continue;
            }
            let stay = a[i].min(b[i]);
            let excess = a[i] - stay;
            let mut row = Vec::new();
            if stay > 0.0 {
                row.push((i, stay / a[i]));
            }
            if excess > 0.0 && delta > 0.0 {
                let f = excess / a[i] / delta;
                row.extend(deficit.iter().map(|&(j, d)| (j, f * d)));
            }
            k[i] = row;
        }
    }
    k
}

/// Joint law of (source atom, current atom) as sparse rows.
struct Joint {
    rows: Vec<Vec<(usize, f64)>>,
    scratch: Vec<f64>,
    touched: Vec<usize>,
}

impl Joint {
    fn diagonal(w: &[f64]) -> Self {
        Joint {
            rows: w
                .iter()
                .enumerate()
                .map(|(i, &m)| if m > 0.0 { vec![(i, m)] } else { Vec::new() })
                .collect(),
            scratch: vec![0.0; w.len()],
            touched: Vec::new(),
        }
    }

    fn apply(&mut self, k: &Kernel) {
        for r in 0..self.rows.len() {
            let row = std::mem::take(&mut self.rows[r]);
            for &(i, m) in &row {
                for &(j, pr) in &k[i] {
                    if self.scratch[j] == 0.0 {
                        self.touched.push(j);
                    }
                    self.scratch[j] += m * pr;
                }
            }
            self.touched.sort_unstable();
            let mut out = Vec::with_capacity(self.touched.len());
            for &j in &self.touched {
                let v = self.scratch[j];
                if v > 0.0 {
                    out.push((j, v));
                }
                self.scratch[j] = 0.0;
            }
            self.touched.clear();
            self.rows[r] = out;
        }
    }
}

/// Coupling of `mu` and `nu` (same atoms, index-aligned) that keeps
/// `min(mu, nu)` on the diagonal and couples the remainder by the product
/// `(mu - nu)_+ x (nu - mu)_+ / delta`. Requires `nu|_C` proportional to
/// `mu|_C` on every cell `C`; its off-diagonal mass is then
/// `1/2 sum_C |nu(C) - mu(C)|`.
pub fn dss_coupling(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cells: &[Vec<usize>],
) -> Result<CouplingPlan> {
    if mu.len() != nu.len() || mu.coords() != nu.coords() {
        return Err(Error::InvalidParameter(
            "coupling needs both measures on the same atoms".into(),
        ));
    }
    let (a, b) = (mu.weights(), nu.weights());
    let (ma, mb) = (mu.total_mass(), nu.total_mass());
    if (ma - mb).abs() > CHAIN_TOL {
        return Err(Error::MassMismatch { left: ma, right: mb });
    }
    let mut covered = vec![false; a.len()];
    for (c, cell) in cells.iter().enumerate() {
        let (ca, cb): (f64, f64) = cell.iter().fold((0.0, 0.0), |s, &i| (s.0 + a[i], s.1 + b[i]));
        let mut dev = 0.0f64;
        for &i in cell {
            covered[i] = true;
            dev = dev.max((b[i] * ca - a[i] * cb).abs());
        }
        if dev > CHAIN_TOL * ca.max(cb).max(1e-300) || (ca == 0.0 && cb > 0.0) {
            return Err(Error::ProportionalityViolated {
                cell: c,
                deviation: dev,
            });
        }
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::InvalidParameter("cells do not cover every atom".into()));
    }
    let all: Vec<usize> = (0..a.len()).collect();
    let k = dss_kernel(a, b, std::slice::from_ref(&all));
    let mut edges = Vec::new();
    for (i, row) in k.iter().enumerate() {
        for &(j, pr) in row {
            edges.push(Edge {
                source: i,
                target: j,
                mass: a[i] * pr,
            });
        }
    }
    Ok(CouplingPlan::new(edges, mu, nu, 1.0))
}

/// Mass a plan between index-aligned measures puts off the diagonal.
pub fn index_off_diagonal_mass(plan: &CouplingPlan) -> f64 {
    plan.edges
        .iter()
        .filter(|e| e.source != e.target)
        .map(|e| e.mass)
        .sum()
}

/// Output of [`multiscale_transport`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiscaleResult {
    pub plan: CouplingPlan,
    /// Upper bound on the plan cost built from the per-level moved mass:
    /// `(2 r)^p [sum_{l < l*} 3^(-p l) moved_l + 3^(-p l*) moved_terminal]`.
    pub certified_cost: f64,
    /// `c_p r^p (3^(-p l*) + sum_{l <= l*} 3^(-p l) S_l)`.
    pub discrepancy_bound: f64,
    /// `S_l = sum_{F in A_l} |nu(F) - mu(F)|`.
    pub level_discrepancy: Vec<f64>,
    /// Off-diagonal mass of each chain step, then of the terminal step.
    pub moved_mass: Vec<f64>,
}

/// Multiscale coupling of `mu` with `nuhat` (which must live on the atoms of
/// `mu`) along the chain of blurred measures `mu_0, ..., mu_{l*}, nuhat`.
pub fn multiscale_transport(
    mu: &DiscreteMeasure,
    nuhat: &DiscreteMeasure,
    tree: &PartitionTree,
    p: f64,
) -> Result<MultiscaleResult> {
    if tree.num_points != mu.len() {
        return Err(Error::InvalidParameter(format!(
            "tree has {} points but the measure has {} atoms",
            tree.num_points,
            mu.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 1")));
    }
    for (i, x) in mu.points().enumerate() {
        let d = squared_euclidean(x, &tree.base.center).sqrt();
        if d > tree.base.radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBaseCell {
                point: i,
                distance: d,
                radius: tree.base.radius,
            });
        }
    }
    let (ma, mb) = (mu.total_mass(), nuhat.total_mass());
    if (ma - mb).abs() > 1e-9 {
        return Err(Error::MassMismatch { left: ma, right: mb });
    }
    let map = map_onto_support(mu, nuhat)?;
    let scale = ma / mb;
    let nu: Vec<f64> = map.nu_on_mu.iter().map(|w| w * scale).collect();
    let w_mu = mu.weights();
    let ls = tree.ell_star();

    let mut level_discrepancy = Vec::with_capacity(ls + 1);
    let mut blurred = Vec::with_capacity(ls + 1);
    for (l, level) in tree.levels.iter().enumerate() {
        let target = cell_masses(&nu, &level.cells);
        let src = cell_masses(w_mu, &level.cells);
        level_discrepancy.push(target.iter().zip(&src).map(|(a, b)| (a - b).abs()).sum());
        let b = blur_weights(w_mu, &level.cells, &target)?;
        for (c, m) in cell_masses(&b, &level.cells).iter().enumerate() {
            if (m - target[c]).abs() > CHAIN_TOL {
                return Err(Error::Solver(format!(
                    "level {l} cell {c}: blurred mass {m} != target {}",
                    target[c]
                )));
            }
        }
        blurred.push(b);
    }

    let mut joint = Joint::diagonal(&blurred[0]);
    let mut moved_mass = Vec::with_capacity(ls + 1);
    for l in 0..ls {
        let k = dss_kernel(&blurred[l], &blurred[l + 1], &tree.levels[l].cells);
        moved_mass.push(
            (0..blurred[l].len())
                .map(|i| (blurred[l][i] - blurred[l + 1][i]).max(0.0))
                .sum(),
        );
        joint.apply(&k);
    }
    // Terminal step: independent coupling inside each finest cell.
    let cur = &blurred[ls];
    let mut term: Kernel = vec![Vec::new(); cur.len()];
    let mut terminal_moved = 0.0;
    for cell in &tree.levels[ls].cells {
        let nf: f64 = cell.iter().map(|&i| nu[i]).sum();
        if !(nf > 0.0) {
            continue;
        }
        let row: Vec<(usize, f64)> = cell
            .iter()
            .filter(|&&j| nu[j] > 0.0)
            .map(|&j| (j, nu[j] / nf))
            .collect();
        for &i in cell {
            if cur[i] > 0.0 {
                let stay = row.iter().find(|x| x.0 == i).map_or(0.0, |x| x.1);
                terminal_moved += cur[i] * (1.0 - stay);
                term[i] = row.clone();
            }
        }
    }
    moved_mass.push(terminal_moved);
    joint.apply(&term);

    let mut edges = Vec::new();
    for (i, row) in joint.rows.iter().enumerate() {
        for &(k, m) in row {
            let nk = nu[k];
            for &(t, share) in &map.pieces[k] {
                let mass = m * share * scale / nk;
                if mass > 0.0 {
                    edges.push(Edge {
                        source: i,
                        target: t,
                        mass,
                    });
                }
            }
        }
    }
    let plan = CouplingPlan::new(edges, mu, nuhat, p);

    let r = tree.base.radius;
    let unit = (2.0 * r).powf(p);
    let mut certified = 0.0;
    for (l, &m) in moved_mass.iter().enumerate() {
        certified += unit * 3f64.powf(-p * l as f64) * m;
    }
    let mut s = 3f64.powf(-p * ls as f64) * ma;
    for (l, &d) in level_discrepancy.iter().enumerate() {
        s += 3f64.powf(-p * l as f64) * d;
    }
    let discrepancy_bound = chain_constant(p) * r.powf(p) * s;
    Ok(MultiscaleResult {
        plan,
        certified_cost: certified,
        discrepancy_bound,
        level_discrepancy,
        moved_mass,
    })
}

/// Output of [`telescope_transport`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TelescopeResult {
    pub plan: CouplingPlan,
    /// `sum_j 2^(p j) m_j cert_j + 2^(p-1) sum_j 2^(p j) |mu(B_j) - nu(B_j)|`.
    pub certified_cost: f64,
    /// `m_j = mu(B_j) ^ nu(B_j)`.
    pub shared_mass: Vec<f64>,
    pub source_layer_mass: Vec<f64>,
    pub target_layer_mass: Vec<f64>,
    /// Certified cost of each rescaled layer (zero for layers with `m_j = 0`).
    pub layer_certified: Vec<f64>,
    /// Layer of each atom of `mu`.
    pub layer_of: Vec<usize>,
}

impl TelescopeResult {
    /// Plan mass between source layer `j` and target layer `k`, where the
    /// target layer of a `nuhat` atom is that of its location.
    pub fn block_masses(&self, nuhat_layer: &[usize]) -> Vec<Vec<f64>> {
        let l = self.shared_mass.len();
        let mut b = vec![vec![0.0; l]; l];
        for e in &self.plan.edges {
            b[self.layer_of[e.source]][nuhat_layer[e.target]] += e.mass;
        }
        b
    }
}

/// Couples `mu` with `nuhat` (on atoms of `mu`) layer by layer: each
/// telescope layer is rescaled into `{rho <= 1}`, coupled by the multiscale
/// transport on a greedy tree of depth `ell_star` in the unit ball, and the
/// layer-mass mismatch is coupled by the normalised product `alpha x beta`.
pub fn telescope_transport(
    mu: &DiscreteMeasure,
    nuhat: &DiscreteMeasure,
    rho: &RhoFunctional,
    ell_star: usize,
    p: f64,
    exec: Execution,
) -> Result<TelescopeResult> {
    let (ma, mb) = (mu.total_mass(), nuhat.total_mass());
    if (ma - mb).abs() > 1e-9 {
        return Err(Error::MassMismatch { left: ma, right: mb });
    }
    let layers = telescope_split(mu, rho)?;
    let map = map_onto_support(mu, nuhat)?;
    let scale = ma / mb;
    let nu: Vec<f64> = map.nu_on_mu.iter().map(|w| w * scale).collect();
    let nl = layers.num_layers();
    let mut src_mass = vec![0.0; nl];
    let mut dst_mass = vec![0.0; nl];
    for i in 0..mu.len() {
        src_mass[layers.layer_of[i]] += mu.weight(i);
        dst_mass[layers.layer_of[i]] += nu[i];
    }
    let shared: Vec<f64> = src_mass.iter().zip(&dst_mass).map(|(a, b)| a.min(*b)).collect();

    // Per-layer multiscale couplings on the rescaled, normalised layers.
    let per_layer = try_map_indexed(exec, nl, |j| -> Result<Option<(Vec<usize>, MultiscaleResult)>> {
        if !(shared[j] > 0.0) {
            return Ok(None);
        }
        let idx = layers.members(j);
        let s = layers.scale_factors[j];
        let sub = mu.select(&idx).scaled(1.0 / s).reweighted(1.0 / src_mass[j]);
        let tw: Vec<f64> = idx.iter().map(|&i| nu[i] / dst_mass[j]).collect();
        let tgt = sub.with_weights(tw)?;
        let tree = greedy_tree(&sub, &BaseBall::unit(mu.dim()), ell_star)?;
        let r = multiscale_transport(&sub, &tgt, &tree, p)?;
        Ok(Some((idx, r)))
    })?;

    // Plan on mu's atoms first, then split onto nuhat's atoms.
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut layer_certified = vec![0.0; nl];
    let mut certified = 0.0;
    for (j, res) in per_layer.iter().enumerate() {
        let Some((idx, r)) = res else { continue };
        for e in &r.plan.edges {
            *acc.entry((idx[e.source], idx[e.target])).or_insert(0.0) += shared[j] * e.mass;
        }
        layer_certified[j] = r.certified_cost;
        certified += 2f64.powf(p * j as f64) * shared[j] * r.certified_cost;
    }
    let alpha: Vec<f64> = (0..mu.len())
        .map(|i| {
            let j = layers.layer_of[i];
            mu.weight(i) * (src_mass[j] - shared[j]) / src_mass[j]
        })
        .collect();
    let beta: Vec<f64> = (0..mu.len())
        .map(|i| {
            let j = layers.layer_of[i];
            if dst_mass[j] > 0.0 {
                nu[i] * (dst_mass[j] - shared[j]) / dst_mass[j]
            } else {
                0.0
            }
        })
        .collect();
    let eta: f64 = alpha.iter().sum();
    if eta > 0.0 {
        for (i, &a) in alpha.iter().enumerate() {
            if a <= 0.0 {
                continue;
            }
            for (k, &b) in beta.iter().enumerate() {
                if b > 0.0 {
                    *acc.entry((i, k)).or_insert(0.0) += a * b / eta;
                }
            }
        }
    }
    for j in 0..nl {
        certified += 2f64.powf(p - 1.0) * 2f64.powf(p * j as f64) * (src_mass[j] - dst_mass[j]).abs();
    }

    let mut edges = Vec::new();
    for (&(i, k), &m) in &acc {
        if !(nu[k] > 0.0) {
            continue;
        }
        for &(t, share) in &map.pieces[k] {
            let mass = m * share * scale / nu[k];
            if mass > 0.0 {
                edges.push(Edge {
                    source: i,
                    target: t,
                    mass,
                });
            }
        }
    }
    let plan = CouplingPlan::new(edges, mu, nuhat, p);
    Ok(TelescopeResult {
        plan,
        certified_cost: certified,
        shared_mass: shared,
        source_layer_mass: src_mass,
        target_layer_mass: dst_mass,
        layer_certified,
        layer_of: layers.layer_of,
    })
}

/// Inputs of the general upper bound on `E W_p^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub p: f64,
    pub q: f64,
    pub m_q: f64,
    pub ell_star: u32,
    pub n: f64,
    /// Last telescope index summed explicitly; `None` picks the smallest
    /// `j` with `2^((p-q) j) < 1e-12`.
    pub j_max: Option<u32>,
    /// Leading constant; `None` uses `2^(p-1) c_p`.
    pub c_pq: Option<f64>,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p = {} must be >= 1", self.p)));
        }
        if !(self.q > self.p) {
            return Err(Error::Divergent(format!(
                "q = {} must exceed p = {}",
                self.q, self.p
            )));
        }
        if !(self.n >= 1.0) {
            return Err(Error::InvalidParameter(format!("n = {} must be >= 1", self.n)));
        }
        if !(self.m_q > 0.0) {
            return Err(Error::InvalidParameter(format!("M_q = {} must be positive", self.m_q)));
        }
        Ok(())
    }

    pub fn leading_constant(&self) -> f64 {
        self.c_pq
            .unwrap_or_else(|| 2f64.powf(self.p - 1.0) * chain_constant(self.p))
    }

    pub fn resolved_j_max(&self) -> u32 {
        self.j_max.unwrap_or_else(|| {
            let r = (self.q - self.p) * std::f64::consts::LN_2;
            // Smallest j with exp(-r j) < 1e-12.
            let mut j = ((1e12f64).ln() / r).floor() as u32;
            while (-r * j as f64).exp() >= 1e-12 {
                j += 1;
            }
            j
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    /// `c_pq M_q^p (truncated_sum + remainder)`.
    pub value: f64,
    /// The double sum over `j <= j_max`, without the leading constant.
    pub truncated_sum: f64,
    /// Bound on the omitted terms `j > j_max`, without the leading constant.
    pub remainder: f64,
    pub j_max: u32,
    /// For each `j <= j_max`, the largest `l` whose square-root branch is at
    /// most `2^(-q j)`; `None` if no level qualifies.
    pub critical_levels: Vec<Option<u32>>,
}

/// Evaluates
/// `c_pq M_q^p sum_j 2^(p j) { 2^(-q j) 3^(-p l*)
///   + sum_{l <= l*} 3^(-p l) min(2^(-q j), (barN_l 2^(-q j) / n)^(1/2)) }`.
pub fn evaluate_general_bound(
    params: &BoundParams,
    bar_n: &dyn Fn(u32) -> f64,
) -> Result<BoundEvaluation> {
    params.validate()?;
    let (p, q, n) = (params.p, params.q, params.n);
    let ls = params.ell_star;
    let j_max = params.resolved_j_max();
    let nbar: Vec<f64> = (0..=ls).map(bar_n).collect();
    if nbar.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidParameter("barN must be nonnegative".into()));
    }
    let w: Vec<f64> = (0..=ls).map(|l| 3f64.powf(-p * l as f64)).collect();
    let tail_ls = 3f64.powf(-p * ls as f64);
    let mut total = 0.0;
    let mut critical = Vec::with_capacity(j_max as usize + 1);
    for j in 0..=j_max {
        let a = 2f64.powf(-q * j as f64);
        let mut inner = a * tail_ls;
        let mut crit = None;
        for l in 0..=ls as usize {
            let b = (nbar[l] * a / n).sqrt();
            if b <= a {
                crit = Some(l as u32);
            }
            inner += w[l] * a.min(b);
        }
        critical.push(crit);
        total += 2f64.powf(p * j as f64) * inner;
    }
    let ratio = 2f64.powf(p - q);
    let wsum: f64 = w.iter().sum();
    let remainder = ratio.powf(j_max as f64 + 1.0) / (1.0 - ratio) * (1.0 + wsum);
    let lead = params.leading_constant() * params.m_q.powf(p);
    Ok(BoundEvaluation {
        value: lead * (total + remainder),
        truncated_sum: total,
        remainder,
        j_max,
        critical_levels: critical,
    })
}
