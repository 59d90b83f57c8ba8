//! Excursion statistics: level-set arc length, excursion volume and the
//! two-sample Kolmogorov-Smirnov test.

use rayon::prelude::*;

use crate::criterion::ExcursionSpec;
use crate::error::{Error, Result};
use crate::randomsets::CoverageField;
use crate::simulate::{ExcursionEnsemble, FieldEnsemble};

#[derive(Debug, Clone, PartialEq)]
pub struct LengthSample {
    pub lengths: Vec<f64>,
    /// Tie tolerance for corner values at the level.
    pub epsilon: f64,
    pub grid_q: usize,
}

/// Arc length of the threshold level set of every realization on a 2-D grid,
/// by marching squares with linear interpolation along cell edges.
pub fn contour_length(ens: &FieldEnsemble, exc: ExcursionSpec) -> Result<LengthSample> {
    contour_length_with(ens, exc, 0.0)
}

pub fn contour_length_with(ens: &FieldEnsemble, exc: ExcursionSpec, epsilon: f64) -> Result<LengthSample> {
    let g = ens.design();
    let q = match g.grid_q() {
        Some(q) if g.dim() == 2 => q,
        _ => return Err(Error::InvalidArgument("contour length needs a 2-D grid design".into())),
    };
    let lengths = (0..ens.n_realizations())
        .into_par_iter()
        .map(|i| field_length(ens.realization(i), q, exc, epsilon))
        .collect();
    Ok(LengthSample { lengths, epsilon, grid_q: q })
}

/// Level-set length of one field stored row-major on a `q x q` cell-centred grid.
pub fn field_length(values: &[f64], q: usize, exc: ExcursionSpec, epsilon: f64) -> f64 {
    let s = exc.sign();
    let t = exc.threshold;
    // signed so that the excursion is `>= 0`
    let f = |i: usize, j: usize| s * (values[i * q + j] - t);
    let h = 1.0 / q as f64;
    let mut total = 0.0;
    for i in 0..q - 1 {
        for j in 0..q - 1 {
            // corners counter-clockwise: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
            let c = [f(i, j), f(i + 1, j), f(i + 1, j + 1), f(i, j + 1)];
            let pos = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
            let inside: Vec<bool> = c.iter().map(|v| *v >= 0.0).collect();
            let mut cross: Vec<[f64; 2]> = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if inside[a] != inside[b] {
                    let den = c[a] - c[b];
                    let w = if den.abs() <= epsilon { 0.5 } else { c[a] / den };
                    cross.push([
                        pos[a][0] + w * (pos[b][0] - pos[a][0]),
                        pos[a][1] + w * (pos[b][1] - pos[a][1]),
                    ]);
                }
            }
            let seg = |p: [f64; 2], r: [f64; 2]| ((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)).sqrt();
            match cross.len() {
                2 => total += seg(cross[0], cross[1]),
                4 => {
                    // crossings sit on edges 0..4 in order; the centre decides
                    // whether the inside corners connect through the middle
                    let centre = 0.25 * c.iter().sum::<f64>();
                    if (centre >= 0.0) == inside[0] {
                        total += seg(cross[0], cross[1]) + seg(cross[2], cross[3]);
                    } else {
                        total += seg(cross[3], cross[0]) + seg(cross[1], cross[2]);
                    }
                }
                _ => {}
            }
        }
    }
    total * h
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    pub volumes: Vec<f64>,
    pub recentered: bool,
    /// Mean of the returned sample before clipping.
    pub center: f64,
    /// Recentred values clipped into `[0, 1]`.
    pub clipped: usize,
}

/// Excursion volume fraction of each realization. With `correct_bias` the
/// sample is shifted so that its mean equals the coverage integral.
pub fn volume_distribution(
    ens: &ExcursionEnsemble,
    correct_bias: bool,
    cov: Option<&CoverageField>,
) -> Result<VolumeSample> {
    let r = ens.design().len() as f64;
    let mut volumes: Vec<f64> = (0..ens.n_realizations())
        .map(|i| ens.mask(i).iter().filter(|b| **b).count() as f64 / r)
        .collect();
    let mean = volumes.iter().sum::<f64>() / volumes.len() as f64;
    if !correct_bias {
        return Ok(VolumeSample { volumes, recentered: false, center: mean, clipped: 0 });
    }
    let cov = cov.ok_or_else(|| Error::InvalidArgument("bias correction needs a coverage field".into()))?;
    if cov.p.len() != ens.design().len() {
        return Err(Error::ShapeMismatch("coverage field and ensemble differ in size".into()));
    }
    let center = cov.integral();
    let shift = center - mean;
    let mut clipped = 0;
    for v in volumes.iter_mut() {
        let s = *v + shift;
        let c = s.clamp(0.0, 1.0);
        clipped += (c != s) as usize;
        *v = c;
    }
    Ok(VolumeSample { volumes, recentered: true, center, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov-Smirnov test at level 5% with the asymptotic
/// Kolmogorov distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS test needs two nonempty samples".into()));
    }
    let statistic = ks_statistic(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let ne = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_q((ne + 0.12 + 0.11 / ne) * statistic);
    Ok(KsResult { statistic, p_value, reject: p_value < 0.05 })
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        // step past every copy of the smallest remaining value in both samples
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small arguments
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=100).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}
