//! Points, discrete measures, empirical measures and the telescope layering
//! of a measure by the magnitude of a homogeneous functional.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covering::RhoFunctional;
use crate::error::{Error, Result};

/// Absolute tolerance used for every mass-balance check on measures.
pub const MASS_TOL: f64 = 1e-12;

/// A point in `R^D` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("point coordinates"));
        }
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        Ok(Point(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean distance between two coordinate slices of equal length.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A finitely supported nonnegative measure on `R^D`.
///
/// Coordinates are stored row-major in one flat buffer. Atoms at identical
/// locations are kept as separate atoms unless [`merge_duplicates`] is called.
///
/// [`merge_duplicates`]: DiscreteMeasure::merge_duplicates
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points.first().map(Point::dim).unwrap_or(1);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            coords.extend_from_slice(p.coords());
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Builds a measure from a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {w}")));
        }
        Ok(DiscreteMeasure {
            dim,
            coords,
            weights,
        })
    }

    /// Builds a probability measure, checking that the weights sum to one.
    pub fn probability(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(points, weights)?;
        let total = m.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::MassMismatch {
                left: total,
                right: 1.0,
            });
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when every weight equals `1/len` within `tol`.
    pub fn is_equal_weight(&self, tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= tol)
    }

    /// Same atoms with new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dim, self.coords.clone(), weights)
    }

    /// Restriction to the atoms listed in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            coords.extend_from_slice(self.point(i));
            weights.push(self.weights[i]);
        }
        DiscreteMeasure {
            dim: self.dim,
            coords,
            weights,
        }
    }

    /// Drops atoms of zero weight. Returns the reduced measure and the
    /// original index of each kept atom.
    pub fn drop_zero_weights(&self) -> (Self, Vec<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect();
        (self.select(&keep), keep)
    }

    /// Every atom multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        DiscreteMeasure {
            dim: self.dim,
            coords: self.coords.iter().map(|x| a * x).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Weights multiplied by `c`, atoms unchanged.
    pub fn reweighted(&self, c: f64) -> Self {
        DiscreteMeasure {
            dim: self.dim,
            coords: self.coords.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    /// Merges atoms with bit-identical coordinates, summing their weights.
    /// The first occurrence fixes the position in the output.
    pub fn merge_duplicates(&self) -> Self {
        use std::collections::HashMap;
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut coords = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, &w) in self.points().zip(&self.weights) {
            let key: Vec<u64> = p.iter().map(|x| (x + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&k) => weights[k] += w,
                None => {
                    index.insert(key, weights.len());
                    coords.extend_from_slice(p);
                    weights.push(w);
                }
            }
        }
        DiscreteMeasure {
            dim: self.dim,
            coords,
            weights,
        }
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.points().map(|p| Point(p.to_vec())).collect()
    }

    pub fn to_json_writer<W: Write>(&self, w: W) -> Result<()> {
        let file = MeasureFile {
            points: self.points().map(<[f64]>::to_vec).collect(),
            weights: self.weights.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<Self> {
        let file: MeasureFile = serde_json::from_reader(r)?;
        let points = file
            .points
            .into_iter()
            .map(Point::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, file.weights)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_json_writer(f)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_json_reader(f)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// The empirical measure of `samples`: mass `1/n` on each sample, duplicates
/// kept as separate atoms.
pub fn empirical_measure(samples: &[Point]) -> Result<DiscreteMeasure> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let n = samples.len();
    DiscreteMeasure::new(samples.to_vec(), vec![1.0 / n as f64; n])
}

/// Reads one point per CSV row. A leading row that does not parse as numbers
/// is treated as a header and skipped.
pub fn read_points_csv<R: Read>(r: R) -> Result<Vec<Point>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => out.push(Point::new(v)?),
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidParameter(format!("row {row}: {e}")));
            }
        }
    }
    if let Some(d) = out.first().map(Point::dim) {
        if let Some(p) = out.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.dim(),
            });
        }
    }
    Ok(out)
}

pub fn write_points_csv<W: Write>(w: W, points: &[Point]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for p in points {
        writer.write_record(p.coords().iter().map(|x| format!("{x:e}")))?;
    }
    writer.flush()?;
    Ok(())
}

/// Assignment of the atoms of a measure to the annuli
/// `B_0 = {rho <= 1}`, `B_j = {2^(j-1) < rho <= 2^j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TelescopeLayers {
    /// Layer index of each atom.
    pub layer_of: Vec<usize>,
    /// `mu(B_j)` for `j = 0..=max_layer`.
    pub layer_masses: Vec<f64>,
    /// `2^j` for `j = 0..=max_layer`.
    pub scale_factors: Vec<f64>,
}

impl TelescopeLayers {
    pub fn num_layers(&self) -> usize {
        self.layer_masses.len()
    }

    /// Indices of the atoms in layer `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.layer_of.len())
            .filter(|&i| self.layer_of[i] == j)
            .collect()
    }

    /// The normalised layer measure: atoms of layer `j` scaled by `2^-j` with
    /// weights renormalised to one. Returns `None` for a massless layer.
    /// The second component lists the original atom index of each atom.
    pub fn rescaled_layer(
        &self,
        mu: &DiscreteMeasure,
        j: usize,
    ) -> Option<(DiscreteMeasure, Vec<usize>)> {
        let mass = *self.layer_masses.get(j)?;
        if mass <= 0.0 {
            return None;
        }
        let idx = self.members(j);
        let sub = mu.select(&idx).scaled(1.0 / self.scale_factors[j]);
        Some((sub.reweighted(1.0 / mass), idx))
    }
}

/// Layer index for a functional value: 0 when `rho <= 1`, otherwise the
/// unique `j` with `2^(j-1) < rho <= 2^j`.
pub fn layer_index(rho: f64) -> usize {
    if rho <= 1.0 {
        return 0;
    }
    let mut j = rho.log2().ceil().max(1.0) as i32;
    while 2f64.powi(j - 1) >= rho {
        j -= 1;
    }
    while 2f64.powi(j) < rho {
        j += 1;
    }
    j as usize
}

/// Splits `mu` into telescope layers by the value of `rho` on each atom.
pub fn telescope_split(mu: &DiscreteMeasure, rho: &RhoFunctional) -> Result<TelescopeLayers> {
    let mut layer_of = Vec::with_capacity(mu.len());
    for (i, p) in mu.points().enumerate() {
        let r = rho.eval(p);
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("rho(x_{i}) = {r}")));
        }
        layer_of.push(layer_index(r));
    }
    let layers = layer_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut layer_masses = vec![0.0; layers];
    for (&j, &w) in layer_of.iter().zip(mu.weights()) {
        layer_masses[j] += w;
    }
    let scale_factors = (0..layers).map(|j| 2f64.powi(j as i32)).collect();
    Ok(TelescopeLayers {
        layer_of,
        layer_masses,
        scale_factors,
    })
}
