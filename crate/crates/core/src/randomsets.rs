//! Random closed set summaries on finite designs: coverage function,
//! Vorob'ev expectation and deviation, Euclidean distance transforms and
//! distance-average variability.
//!
//! The domain is the unit cube with Lebesgue measure; every node of an
//! `r`-point design carries volume `1 / r` (on a `q^d` grid this is the cell
//! volume `q^-d`).

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::simulate::ExcursionEnsemble;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageField {
    pub design: Design,
    pub p: Vec<f64>,
}

impl CoverageField {
    pub fn new(design: Design, p: Vec<f64>) -> Result<Self> {
        if p.len() != design.len() {
            return Err(Error::ShapeMismatch(format!("{} values on {} nodes", p.len(), design.len())));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("coverage value {v} outside [0, 1]")));
        }
        Ok(Self { design, p })
    }

    /// `int p dmu`, the expected excursion volume.
    pub fn integral(&self) -> f64 {
        self.p.iter().sum::<f64>() / self.p.len() as f64
    }
}

/// Per-node volume of a design covering the unit cube.
pub fn cell_volume(design: &Design) -> f64 {
    1.0 / design.len() as f64
}

/// Fraction of realizations covering each node.
pub fn coverage(ens: &ExcursionEnsemble) -> CoverageField {
    let r = ens.design().len();
    let n = ens.n_realizations();
    let mut counts = vec![0usize; r];
    for i in 0..n {
        for (c, &b) in counts.iter_mut().zip(ens.mask(i)) {
            *c += b as usize;
        }
    }
    let p = counts.iter().map(|&c| c as f64 / n as f64).collect();
    CoverageField { design: ens.design().clone(), p }
}

/// Vorob'ev expectation `Q_alpha = {p >= alpha}`.
///
/// `alpha` is the largest coverage value with `mu(Q_alpha) >= target`
/// (default `int p`), so the next larger level has `mu < target`. A
/// non-positive target yields the empty set with `alpha` just above `max p`.
pub fn vorobev(cov: &CoverageField, target_volume: Option<f64>) -> (f64, Vec<bool>) {
    let target = target_volume.unwrap_or_else(|| cov.integral());
    let w = cell_volume(&cov.design);
    let mut sorted = cov.p.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let max = sorted.first().copied().unwrap_or(0.0);
    // absorbs rounding in the default target, which is itself a sum of p
    let tol = 1e-12 * w;
    let alpha = if target <= tol {
        next_up(max)
    } else {
        // ties of the chosen order statistic all join the set
        let needed = ((target - tol) / w).ceil().max(1.0) as usize;
        sorted[(needed - 1).min(sorted.len() - 1)]
    };
    let mask = cov.p.iter().map(|&v| v >= alpha).collect();
    (alpha, mask)
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// Mean measure of the symmetric difference between `mask` and each realization.
pub fn vorobev_deviation(ens: &ExcursionEnsemble, mask: &[bool]) -> Result<f64> {
    let r = ens.design().len();
    if mask.len() != r {
        return Err(Error::ShapeMismatch(format!("mask of {} nodes for a {r}-node ensemble", mask.len())));
    }
    let n = ens.n_realizations();
    if n == 0 {
        return Err(Error::Empty("empty ensemble".into()));
    }
    let total: usize = (0..n).map(|i| ens.mask(i).iter().zip(mask).filter(|(a, b)| a != b).count()).sum();
    Ok(total as f64 * cell_volume(ens.design()) / n as f64)
}

/// Distance from every grid node to the nearest node of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrid {
    pub grid: Design,
    pub dist: Vec<f64>,
}

fn grid_shape(grid: &Design) -> Result<(usize, usize)> {
    let q = grid
        .grid_q()
        .ok_or_else(|| Error::InvalidArgument("distance transforms need a grid design".into()))?;
    Ok((q, grid.dim()))
}

/// Squared distance transform of one line of samples (lower envelope of
/// parabolas rooted at the finite entries of `f`).
fn dt_line(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// Squared distances in grid-index units (exact integers), `inf` everywhere
/// for an empty mask.
fn squared_index_distances(q: usize, d: usize, mask: &[bool]) -> Vec<f64> {
    let mut g: Vec<f64> = mask.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let mut line = vec![0.0; q];
    let mut out = vec![0.0; q];
    let (mut v, mut z) = (Vec::with_capacity(q), Vec::with_capacity(q + 1));
    let total = g.len();
    for axis in 0..d {
        let stride = q.pow((d - 1 - axis) as u32);
        let block = stride * q;
        for base in (0..total).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (k, l) in line.iter_mut().enumerate() {
                    *l = g[start + k * stride];
                }
                dt_line(&line, &mut out, &mut v, &mut z);
                for (k, o) in out.iter().enumerate() {
                    g[start + k * stride] = *o;
                }
            }
        }
    }
    g
}

/// Exact Euclidean distance transform on a grid design, in unit-cube units.
///
/// An empty mask gives the cube diameter `sqrt(d)` everywhere.
pub fn distance_transform(grid: &Design, mask: &[bool]) -> Result<DistanceGrid> {
    let (q, d) = grid_shape(grid)?;
    if mask.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("mask of {} nodes on a {}-node grid", mask.len(), grid.len())));
    }
    Ok(DistanceGrid { grid: grid.clone(), dist: distances(q, d, mask) })
}

fn distances(q: usize, d: usize, mask: &[bool]) -> Vec<f64> {
    if !mask.iter().any(|b| *b) {
        return vec![(d as f64).sqrt(); mask.len()];
    }
    squared_index_distances(q, d, mask).into_iter().map(|s| s.sqrt() / q as f64).collect()
}

fn realization_distances(ens: &ExcursionEnsemble) -> Result<Vec<Vec<f64>>> {
    let (q, d) = grid_shape(ens.design())?;
    let n = ens.n_realizations();
    if n == 0 {
        return Err(Error::Empty("empty ensemble".into()));
    }
    if (0..n).all(|i| !ens.mask(i).iter().any(|b| *b)) {
        return Err(Error::Empty("every realization is empty; the distance average is undefined".into()));
    }
    Ok((0..n).into_par_iter().map(|i| distances(q, d, ens.mask(i))).collect())
}

fn mean_distance(ds: &[Vec<f64>]) -> Vec<f64> {
    let r = ds[0].len();
    let mut mean = vec![0.0; r];
    for d in ds {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    let n = ds.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceAverage {
    /// `{mean distance <= u_bar}`
    pub mask: Vec<bool>,
    pub u_bar: f64,
    /// Empirical mean distance function.
    pub mean_dist: Vec<f64>,
    /// L2 distance between the mask's distance function and `mean_dist`.
    pub delta: f64,
}

/// Empirical distance average: the sublevel set of the mean distance
/// function whose own distance function is L2-closest to it. Ties resolve to
/// the smallest level.
pub fn distance_average(ens: &ExcursionEnsemble) -> Result<DistanceAverage> {
    let (q, d) = grid_shape(ens.design())?;
    let ds = realization_distances(ens)?;
    let mean = mean_distance(&ds);
    let w = cell_volume(ens.design());
    let mut levels = mean.clone();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    levels.dedup();
    let scores: Vec<f64> = levels
        .par_iter()
        .map(|&u| {
            let mask: Vec<bool> = mean.iter().map(|&v| v <= u).collect();
            let du = distances(q, d, &mask);
            du.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * w
        })
        .collect();
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = k;
        }
    }
    let u_bar = levels[best];
    let mask = mean.iter().map(|&v| v <= u_bar).collect();
    Ok(DistanceAverage { mask, u_bar, delta: scores[best].sqrt(), mean_dist: mean })
}

/// Distance-average variability: mean over realizations of the squared L2
/// distance between each distance function and their mean.
pub fn dav(ens: &ExcursionEnsemble) -> Result<f64> {
    let ds = realization_distances(ens)?;
    let mean = mean_distance(&ds);
    let w = cell_volume(ens.design());
    let total: f64 = ds
        .iter()
        .map(|d| d.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * w)
        .sum();
    Ok(total / ds.len() as f64)
}

/// Heat table with one row per node: coordinates then `value`.
pub fn write_heat_csv<W: Write>(design: &Design, values: &[f64], mut out: W) -> Result<()> {
    if values.len() != design.len() {
        return Err(Error::ShapeMismatch(format!("{} values on {} nodes", values.len(), design.len())));
    }
    let head: Vec<String> = (1..=design.dim()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{},value", head.join(","))?;
    for (x, v) in design.rows().zip(values) {
        let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{v}", coords.join(","))?;
    }
    Ok(())
}
