//! Point sets in the unit cube: Sobol' sequences, maximin Latin hypercubes
//! and cell-centred regular grids.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest dimension covered by the built-in direction-number table.
pub const MAX_SOBOL_DIM: usize = 21;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Sobol,
    MaximinLhs,
    /// Tensor lattice with `q` points per axis.
    Grid { q: usize },
    Explicit,
}

/// `r` points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    dim: usize,
    points: Vec<f64>,
    kind: DesignKind,
}

impl Design {
    /// Wraps arbitrary points; every coordinate must lie in `[0, 1]`.
    pub fn explicit(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("design dimension must be positive".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not form rows of length {dim}",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {bad} outside the unit cube"
            )));
        }
        Ok(Self { dim, points, kind: DesignKind::Explicit })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Empty("no rows".into()))?;
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            points.extend_from_slice(row);
        }
        Self::explicit(dim, points)
    }

    /// An empty design of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Self { dim, points: Vec::new(), kind: DesignKind::Explicit }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Points per axis when this is a grid design.
    pub fn grid_q(&self) -> Option<usize> {
        match self.kind {
            DesignKind::Grid { q } => Some(q),
            _ => None,
        }
    }

    /// First `n` points, keeping the kind (prefixes of Sobol' designs stay Sobol').
    pub fn prefix(&self, n: usize) -> Design {
        let n = n.min(self.len());
        let kind = match self.kind {
            DesignKind::Grid { .. } if n != self.len() => DesignKind::Explicit,
            k => k,
        };
        Design { dim: self.dim, points: self.points[..n * self.dim].to_vec(), kind }
    }

    /// Appends the rows of `other`; the result is an explicit design.
    pub fn concat(&self, other: &Design) -> Result<Design> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Ok(Design { dim: self.dim, points, kind: DesignKind::Explicit })
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        self.points.extend_from_slice(x);
        self.kind = DesignKind::Explicit;
        Ok(())
    }

    /// Smallest Euclidean distance between two distinct rows (infinity for r < 2).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(sq_dist(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`Design::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Design> {
        let mut dim = None;
        let mut points = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match dim {
                None => {
                    let cols: Vec<&str> = line.split(',').collect();
                    for (j, c) in cols.iter().enumerate() {
                        if c.trim() != format!("x{}", j + 1) {
                            return Err(Error::Parse {
                                line: idx + 1,
                                msg: format!("expected header x1..x{}", cols.len()),
                            });
                        }
                    }
                    dim = Some(cols.len());
                }
                Some(d) => {
                    let mut n = 0;
                    for cell in line.split(',') {
                        let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                            line: idx + 1,
                            msg: format!("not a number: {cell}"),
                        })?;
                        points.push(v);
                        n += 1;
                    }
                    if n != d {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: format!("expected {d} columns, found {n}"),
                        });
                    }
                }
            }
        }
        let dim = dim.ok_or_else(|| Error::Empty("design file has no header".into()))?;
        Design::explicit(dim, points)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Joe-Kuo new-joe-kuo-6.21201 parameters for dimensions 2..=21:
// (degree s, coefficient word a, initial direction integers m_1..m_s).
const JOE_KUO: [(u32, u32, &[u32]); MAX_SOBOL_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

fn direction_numbers(axis: usize) -> [u32; 32] {
    let mut v = [0u32; 32];
    if axis == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[axis - 1];
    let s = s as usize;
    for i in 0..s {
        v[i] = m[i] << (31 - i);
    }
    for i in s..32 {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

/// Points `skip .. skip + count` of the unscrambled Sobol' sequence.
///
/// Index 0 is the origin, so `sobol(d, r, 1)` starts at `(0.5, ..., 0.5)`.
pub fn sobol(dim: usize, count: usize, skip: usize) -> Result<Design> {
    if dim == 0 || dim > MAX_SOBOL_DIM {
        return Err(Error::UnsupportedDimension { dim, max: MAX_SOBOL_DIM });
    }
    if count == 0 {
        return Err(Error::InvalidArgument("Sobol' design needs at least one point".into()));
    }
    if (skip as u64) + (count as u64) > (1u64 << 32) {
        return Err(Error::ResourceLimit("Sobol' index exceeds 2^32".into()));
    }
    let dirs: Vec<[u32; 32]> = (0..dim).map(direction_numbers).collect();
    // state for index `skip` from its Gray code
    let gray = (skip as u32) ^ ((skip as u32) >> 1);
    let mut state: Vec<u32> = dirs
        .iter()
        .map(|v| (0..32).filter(|b| (gray >> b) & 1 == 1).fold(0, |acc, b| acc ^ v[b]))
        .collect();
    let scale = 1.0 / 4_294_967_296.0;
    let mut points = Vec::with_capacity(count * dim);
    let mut index = skip as u32;
    for n in 0..count {
        points.extend(state.iter().map(|&s| s as f64 * scale));
        if n + 1 < count {
            let c = index.trailing_ones() as usize;
            for (s, v) in state.iter_mut().zip(&dirs) {
                *s ^= v[c];
            }
            index = index.wrapping_add(1);
        }
    }
    Ok(Design { dim, points, kind: DesignKind::Sobol })
}

/// Cell-centred lattice `(i + 0.5) / q`, row-major (last axis fastest).
pub fn grid(dim: usize, q: usize) -> Result<Design> {
    grid_with_cap(dim, q, DEFAULT_GRID_CAP)
}

pub fn grid_with_cap(dim: usize, q: usize, cap: usize) -> Result<Design> {
    if dim == 0 {
        return Err(Error::InvalidArgument("grid dimension must be positive".into()));
    }
    if q < 2 {
        return Err(Error::InvalidArgument(format!("grid needs q >= 2, got {q}")));
    }
    let total = (q as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::ResourceLimit(format!("grid {q}^{dim} exceeds cap {cap}")));
    }
    let total = total as usize;
    let mut points = Vec::with_capacity(total * dim);
    for idx in 0..total {
        for i in grid_multi_index(idx, dim, q) {
            points.push((i as f64 + 0.5) / q as f64);
        }
    }
    Ok(Design { dim, points, kind: DesignKind::Grid { q } })
}

/// Multi-index of the lexicographic grid position `idx`.
pub fn grid_multi_index(mut idx: usize, dim: usize, q: usize) -> Vec<usize> {
    let mut out = vec![0; dim];
    for slot in out.iter_mut().rev() {
        *slot = idx % q;
        idx /= q;
    }
    out
}

pub fn grid_linear_index(multi: &[usize], q: usize) -> usize {
    multi.iter().fold(0, |acc, &i| acc * q + i)
}

/// A uniformly random Latin hypercube: one point per stratum on every axis.
pub fn random_lhs<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<f64> {
    let mut points = vec![0.0; dim * count];
    let mut perm: Vec<usize> = (0..count).collect();
    for j in 0..dim {
        perm.shuffle(rng);
        for (i, &p) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            points[i * dim + j] = (p as f64 + u) / count as f64;
        }
    }
    points
}

/// Maximin Latin hypercube from `restarts` random starts, each improved by
/// pairwise coordinate exchanges until no swap increases the minimum distance.
pub fn maximin_lhs(dim: usize, count: usize, seed: u64, restarts: usize) -> Result<Design> {
    if dim == 0 {
        return Err(Error::InvalidArgument("LHS dimension must be positive".into()));
    }
    if count < 2 {
        return Err(Error::InvalidArgument(format!("LHS needs at least 2 points, got {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Score, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let mut pts = random_lhs(dim, count, &mut rng);
        let score = exchange_optimize(&mut pts, dim, count);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, pts));
        }
    }
    let (_, points) = best.expect("at least one restart");
    Ok(Design { dim, points, kind: DesignKind::MaximinLhs })
}

/// (minimum squared distance, minus the number of pairs attaining it)
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Score(f64, i64);

fn score_of(d2: &[f64], r: usize) -> Score {
    let mut min = f64::INFINITY;
    let mut ties = 0i64;
    for i in 0..r {
        for j in i + 1..r {
            let v = d2[i * r + j];
            if v < min - 1e-15 {
                min = v;
                ties = 1;
            } else if (v - min).abs() <= 1e-15 {
                ties += 1;
            }
        }
    }
    Score(min, -ties)
}

fn refresh_row(d2: &mut [f64], pts: &[f64], dim: usize, r: usize, i: usize) {
    for k in 0..r {
        if k != i {
            let v = sq_dist(&pts[i * dim..(i + 1) * dim], &pts[k * dim..(k + 1) * dim]);
            d2[i * r + k] = v;
            d2[k * r + i] = v;
        }
    }
}

fn exchange_optimize(pts: &mut [f64], dim: usize, r: usize) -> Score {
    let mut d2 = vec![0.0; r * r];
    for i in 0..r {
        refresh_row(&mut d2, pts, dim, r, i);
    }
    let mut current = score_of(&d2, r);
    loop {
        // points involved in a critical pair
        let mut critical = Vec::new();
        for i in 0..r {
            for j in i + 1..r {
                if (d2[i * r + j] - current.0).abs() <= 1e-15 {
                    critical.push(i);
                    critical.push(j);
                }
            }
        }
        critical.sort_unstable();
        critical.dedup();
        let mut best_move: Option<(Score, usize, usize, usize)> = None;
        for &i in &critical {
            for k in 0..r {
                if k == i {
                    continue;
                }
                for c in 0..dim {
                    pts.swap(i * dim + c, k * dim + c);
                    refresh_row(&mut d2, pts, dim, r, i);
                    refresh_row(&mut d2, pts, dim, r, k);
                    let s = score_of(&d2, r);
                    if s > current && best_move.as_ref().is_none_or(|(b, ..)| s > *b) {
                        best_move = Some((s, i, k, c));
                    }
                    pts.swap(i * dim + c, k * dim + c);
                    refresh_row(&mut d2, pts, dim, r, i);
                    refresh_row(&mut d2, pts, dim, r, k);
                }
            }
        }
        match best_move {
            Some((s, i, k, c)) => {
                pts.swap(i * dim + c, k * dim + c);
                refresh_row(&mut d2, pts, dim, r, i);
                refresh_row(&mut d2, pts, dim, r, k);
                current = s;
            }
            None => return current,
        }
    }
}
