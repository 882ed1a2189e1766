//! Hypervolume of a union of origin-anchored boxes in the unit cube.
//!
//! Every point `v` spans the box `[0, v_1] x ... x [0, v_J]`. The volume of the
//! union is computed exactly by inclusion-exclusion over all nonempty subsets of
//! points, estimated by uniform Monte Carlo, or estimated by random scalarization
//! in polar coordinates. The exact routine also has an analytic (sub)gradient with
//! respect to the box corners.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Subset enumeration is exponential in the point count; refuse beyond this.
pub const MAX_EXACT_POINTS: usize = 24;

/// A corner of an origin-anchored box, with every coordinate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::argument("a point needs at least one coordinate"));
        }
        for (j, &c) in coords.iter().enumerate() {
            if !c.is_finite() || !(0.0..=1.0).contains(&c) {
                return Err(Error::domain(format!(
                    "coordinate {j} = {c} is outside [0, 1]"
                )));
            }
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// An ordered, nonempty collection of points of a common dimension.
///
/// Order matters only for gradient attribution: row `k` of an [`HvGradient`]
/// belongs to point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Point>,
    dim: usize,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::argument("a point set needs at least one point"))?;
        let dim = first.dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
        }
        Ok(Self { points, dim })
    }

    /// Builds a point set from raw rows, validating every coordinate.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| Point::new(r.as_ref().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Returns a new set with `p` appended.
    pub fn with_point(&self, p: Point) -> Result<Self> {
        let mut points = self.points.clone();
        points.push(p);
        Self::new(points)
    }

    /// Reads one point per row. A leading `dim0,...` header is optional.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            if i == 0 && rec.get(0).is_some_and(|f| f.starts_with("dim")) {
                continue;
            }
            let coords = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("not a number: {f:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let point = Point::new(coords).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if let Some(first) = rows.first().map(Point::dim) {
                if point.dim() != first {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {first} columns, found {}", point.dim()),
                    });
                }
            }
            rows.push(point);
        }
        Self::new(rows)
    }

    /// Writes the set with a `dim0,...,dim{J-1}` header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record((0..self.dim).map(|j| format!("dim{j}")))?;
        for p in &self.points {
            wtr.write_record(p.coords.iter().map(|c| c.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Partial derivatives of the exact hypervolume, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct HvGradient {
    partials: Vec<Vec<f64>>,
}

impl HvGradient {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.partials[k][j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.partials[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.partials
    }
}

fn check_exact_size(ps: &PointSet) -> Result<()> {
    if ps.len() > MAX_EXACT_POINTS {
        return Err(Error::argument(format!(
            "{} points exceed the inclusion-exclusion limit of {MAX_EXACT_POINTS}",
            ps.len()
        )));
    }
    Ok(())
}

/// Exact volume of the union of boxes by inclusion-exclusion.
///
/// Sums `(-1)^(|S|-1) * prod_j min_{k in S} v_kj` over every nonempty subset `S`,
/// enumerated as bitmasks `1..2^K`. Cost is `O(J K 2^K)`.
pub fn exact_hypervolume(ps: &PointSet) -> Result<f64> {
    check_exact_size(ps)?;
    // Weakly dominated boxes add subsets whose terms cancel; drop them up front so
    // that adding a dominated point leaves the floating-point sum bit-identical.
    let kept = nondominated_boxes(ps);
    let dim = ps.dim();
    let mut mins = vec![0.0; dim];
    let mut total = 0.0;
    for mask in 1u32..(1u32 << kept.len()) {
        mins.fill(f64::INFINITY);
        for (idx, p) in kept.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                for (m, &c) in mins.iter_mut().zip(&p.coords) {
                    if c < *m {
                        *m = c;
                    }
                }
            }
        }
        let vol: f64 = mins.iter().product();
        if mask.count_ones() % 2 == 1 {
            total += vol;
        } else {
            total -= vol;
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Boxes not contained in another box of the set, in original order. Among
/// identical corners the first occurrence is kept.
fn nondominated_boxes(ps: &PointSet) -> Vec<&Point> {
    let pts = &ps.points;
    pts.iter()
        .enumerate()
        .filter(|&(i, p)| {
            !pts.iter().enumerate().any(|(j, q)| {
                j != i
                    && q.coords.iter().zip(&p.coords).all(|(a, b)| a >= b)
                    && (j < i || q.coords != p.coords)
            })
        })
        .map(|(_, p)| p)
        .collect()
}

/// Gradient of [`exact_hypervolume`] with respect to every coordinate.
///
/// Within each subset the minimum of coordinate `j` is attributed to the lowest
/// point index attaining it. Away from ties this is the true partial derivative;
/// at ties it is a valid subgradient of the piecewise-linear minimum.
pub fn hv_gradient(ps: &PointSet) -> Result<HvGradient> {
    check_exact_size(ps)?;
    let k = ps.len();
    let dim = ps.dim();
    let mut partials = vec![vec![0.0; dim]; k];
    let mut mins = vec![0.0; dim];
    let mut argmins = vec![0usize; dim];
    for mask in 1u32..(1u32 << k) {
        mins.fill(f64::INFINITY);
        for (idx, p) in ps.points.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                for j in 0..dim {
                    // strict comparison keeps the lowest index on ties
                    if p.coords[j] < mins[j] {
                        mins[j] = p.coords[j];
                        argmins[j] = idx;
                    }
                }
            }
        }
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        for j in 0..dim {
            let others: f64 = mins
                .iter()
                .enumerate()
                .filter(|&(jj, _)| jj != j)
                .map(|(_, m)| m)
                .product();
            partials[argmins[j]][j] += sign * others;
        }
    }
    Ok(HvGradient { partials })
}

/// Uniform Monte Carlo estimate of the union volume and its standard error.
pub fn mc_hypervolume(ps: &PointSet, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::argument("Monte Carlo needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; ps.dim()];
    let mut hits = 0usize;
    for _ in 0..samples {
        for c in y.iter_mut() {
            *c = rng.random::<f64>();
        }
        let covered = ps
            .points
            .iter()
            .any(|p| p.coords.iter().zip(&y).all(|(v, yj)| yj <= v));
        if covered {
            hits += 1;
        }
    }
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// Volume of the unit `J`-ball divided by `2^J`: the positive-orthant share.
pub fn scalarization_constant(dim: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_n = 2 pi / n * V_{n-2}
    let (mut even, mut odd) = (1.0f64, 2.0f64);
    let mut ball = if dim == 0 { 1.0 } else { 2.0 };
    for n in 2..=dim {
        if n % 2 == 0 {
            even *= 2.0 * std::f64::consts::PI / n as f64;
            ball = even;
        } else {
            odd *= 2.0 * std::f64::consts::PI / n as f64;
            ball = odd;
        }
    }
    ball / 2f64.powi(dim as i32)
}

/// Random hypervolume scalarization estimate with its standard error.
///
/// Directions `w` are uniform on the positive-orthant part of the unit sphere.
/// The statistic per direction is `max_k min_j (v_kj / w_j)^J`, and the estimate
/// is its mean scaled by [`scalarization_constant`].
pub fn scalarized_hypervolume_with_error(
    ps: &PointSet,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if draws == 0 {
        return Err(Error::argument("scalarization needs at least one draw"));
    }
    let dim = ps.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        loop {
            for wj in w.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *wj = g.abs();
            }
            if w.iter().all(|&wj| wj > 0.0) {
                break;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|wj| *wj /= norm);
        let s = ps
            .points
            .iter()
            .map(|p| {
                p.coords
                    .iter()
                    .zip(&w)
                    .map(|(v, wj)| v / wj)
                    .fold(f64::INFINITY, f64::min)
                    .powi(dim as i32)
            })
            .fold(0.0, f64::max);
        sum += s;
        sum_sq += s * s;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = if draws > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let c = scalarization_constant(dim);
    Ok((c * mean, c * (var / n).sqrt()))
}

pub fn scalarized_hypervolume(ps: &PointSet, draws: usize, seed: u64) -> Result<f64> {
    scalarized_hypervolume_with_error(ps, draws, seed).map(|(est, _)| est)
}
