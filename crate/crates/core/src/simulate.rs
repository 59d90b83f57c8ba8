//! Conditional simulation on finite designs and affine quasi-realizations.
//!
//! Ensembles are stored realization-major: realization `i` occupies
//! `values[i * r .. (i + 1) * r]`.

use std::io::{Read, Write};
use std::sync::Arc;

use faer::linalg::matmul::triangular::{matmul as tri_matmul, BlockStructure};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::criterion::{Direction, ExcursionSpec};
use crate::designs::Design;
use crate::error::{Error, Result};
use crate::gp::{factor, AffinePredictor, PosteriorGp};
use crate::kernels::check_dim;
use crate::linalg::forward_solve_mat;

/// Default cap on the number of points of a full simulation design.
pub const DEFAULT_SIMULATION_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FullDesign,
    /// Affine reconstruction from `m` simulation points.
    QuasiRealization(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEnsemble {
    design: Design,
    values: Vec<f64>,
    n: usize,
    provenance: Provenance,
}

impl FieldEnsemble {
    pub fn new(design: Design, values: Vec<f64>, n: usize, provenance: Provenance) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one realization".into()));
        }
        if values.len() != n * design.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} realizations on {} points",
                values.len(),
                design.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite simulated value {v}")));
        }
        Ok(Self { design, values, n, provenance })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_realizations(&self) -> usize {
        self.n
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn realization(&self, i: usize) -> &[f64] {
        let r = self.design.len();
        &self.values[i * r..(i + 1) * r]
    }

    /// Values at node `j` across realizations.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let r = self.design.len();
        (0..self.n).map(|i| self.values[i * r + j]).collect()
    }

    /// Little-endian binary dump: header `{N, r, d, flags = 0}` as `u64`,
    /// the `r x d` design, then the `N x r` values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        write_header(&mut out, self.n, &self.design, 0)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let (n, design, flags) = read_header(&mut input)?;
        if flags & MASK_FLAG != 0 {
            return Err(Error::InvalidArgument("file holds masks, not field values".into()));
        }
        let values = read_f64s(&mut input, n * design.len())?;
        Self::new(design, values, n, Provenance::FullDesign)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionEnsemble {
    design: Design,
    masks: Vec<bool>,
    n: usize,
    exc: ExcursionSpec,
}

impl ExcursionEnsemble {
    pub fn new(design: Design, masks: Vec<bool>, n: usize, exc: ExcursionSpec) -> Result<Self> {
        if masks.len() != n * design.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for {n} realizations on {} points",
                masks.len(),
                design.len()
            )));
        }
        Ok(Self { design, masks, n, exc })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_realizations(&self) -> usize {
        self.n
    }

    pub fn exc(&self) -> ExcursionSpec {
        self.exc
    }

    pub fn masks(&self) -> &[bool] {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        let r = self.design.len();
        &self.masks[i * r..(i + 1) * r]
    }

    /// Same layout as [`FieldEnsemble::write_binary`] with `flags` bit 0 set
    /// (bit 1 marks a below-threshold set), followed by the threshold as one
    /// `f64` and the masks bit-packed row-major, least significant bit first.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let below = if self.exc.direction == Direction::Below { BELOW_FLAG } else { 0 };
        write_header(&mut out, self.n, &self.design, MASK_FLAG | below)?;
        out.write_all(&self.exc.threshold.to_le_bytes())?;
        let mut bytes = vec![0u8; self.masks.len().div_ceil(8)];
        for (k, &b) in self.masks.iter().enumerate() {
            if b {
                bytes[k / 8] |= 1 << (k % 8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let (n, design, flags) = read_header(&mut input)?;
        if flags & MASK_FLAG == 0 {
            return Err(Error::InvalidArgument("file holds field values, not masks".into()));
        }
        let t = read_f64s(&mut input, 1)?[0];
        let exc = if flags & BELOW_FLAG != 0 { ExcursionSpec::below(t) } else { ExcursionSpec::above(t) };
        let total = n * design.len();
        let mut bytes = vec![0u8; total.div_ceil(8)];
        input.read_exact(&mut bytes)?;
        let masks = (0..total).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect();
        Self::new(design, masks, n, exc)
    }
}

const MASK_FLAG: u64 = 1;
const BELOW_FLAG: u64 = 2;

fn write_header<W: Write>(out: &mut W, n: usize, design: &Design, flags: u64) -> Result<()> {
    for v in [n as u64, design.len() as u64, design.dim() as u64, flags] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in design.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(input: &mut R) -> Result<(usize, Design, u64)> {
    let mut head = [0u8; 32];
    input.read_exact(&mut head)?;
    let word = |k: usize| u64::from_le_bytes(head[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let (n, r, d, flags) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3));
    if d == 0 || r.checked_mul(d).is_none() || n.checked_mul(r).is_none() {
        return Err(Error::InvalidArgument(format!("bad ensemble header {n} x {r} x {d}")));
    }
    let pts = read_f64s(input, r * d)?;
    Ok((n, Design::explicit(d, pts)?, flags))
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

/// Standard normal draws in realization-major order, as an `r x N` matrix.
fn standard_normals(r: usize, n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let mut xi = Mat::zeros(r, n);
    for i in 0..n {
        for j in 0..r {
            xi[(j, i)] = StandardNormal.sample(rng);
        }
    }
    xi
}

/// `mean + L xi` column by column.
fn correlate(mean: &[f64], l: &Mat<f64>, xi: &Mat<f64>) -> Mat<f64> {
    let (r, n) = (xi.nrows(), xi.ncols());
    let mut out = Mat::from_fn(r, n, |j, _| mean[j]);
    tri_matmul(
        out.as_mut(),
        BlockStructure::Rectangular,
        Accum::Add,
        l.as_ref(),
        BlockStructure::TriangularLower,
        xi.as_ref(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    out
}

/// Gaussian sampler for a possibly singular covariance: nodes whose variance
/// is below `resolution` are deterministic and left out of the factor.
struct Sampler {
    active: Option<Vec<usize>>,
    l: Mat<f64>,
}

impl Sampler {
    fn new(cov: &Mat<f64>, resolution: f64, scale: f64) -> Result<Self> {
        let r = cov.nrows();
        let active: Vec<usize> = (0..r).filter(|&j| cov[(j, j)] > resolution).collect();
        if active.len() == r {
            return Ok(Self { active: None, l: factor(cov, scale)?.0 });
        }
        let sub = Mat::from_fn(active.len(), active.len(), |i, j| cov[(active[i], active[j])]);
        let l = if active.is_empty() { Mat::zeros(0, 0) } else { factor(&sub, scale)?.0 };
        Ok(Self { active: Some(active), l })
    }

    /// `mean + L xi`, using only the rows of `xi` that belong to active nodes.
    fn draw(&self, mean: &[f64], xi: &Mat<f64>) -> Mat<f64> {
        let Some(active) = &self.active else {
            return correlate(mean, &self.l, xi);
        };
        let n = xi.ncols();
        let sub_xi = Mat::from_fn(active.len(), n, |k, i| xi[(active[k], i)]);
        let sub_mean: Vec<f64> = active.iter().map(|&j| mean[j]).collect();
        let sub = correlate(&sub_mean, &self.l, &sub_xi);
        let mut out = Mat::from_fn(mean.len(), n, |j, _| mean[j]);
        for i in 0..n {
            for (k, &j) in active.iter().enumerate() {
                out[(j, i)] = sub[(k, i)];
            }
        }
        out
    }
}

fn realization_major(m: &Mat<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.ncols() {
        v.extend((0..m.nrows()).map(|j| m[(j, i)]));
    }
    v
}

fn check_cap(r: usize, cap: usize) -> Result<()> {
    if r > cap {
        return Err(Error::ResourceLimit(format!("simulation design of {r} points exceeds cap {cap}")));
    }
    Ok(())
}

/// `N` conditional draws on `g` by Cholesky factorization of `K_n(g, g)`.
pub fn simulate_full(gp: &PosteriorGp, g: &Design, n: usize, seed: u64) -> Result<FieldEnsemble> {
    simulate_full_with_cap(gp, g, n, seed, DEFAULT_SIMULATION_CAP)
}

pub fn simulate_full_with_cap(gp: &PosteriorGp, g: &Design, n: usize, seed: u64, cap: usize) -> Result<FieldEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    FullSimulator::with_cap(gp, g, cap)?.simulate(n, seed)
}

/// Draws `Z(E)` exactly and maps every draw through the predictor onto `g`.
pub fn quasi_realizations(pred: &AffinePredictor, g: &Design, n: usize, seed: u64) -> Result<FieldEnsemble> {
    QuasiSimulator::new(pred, g)?.simulate(n, seed)
}

/// Full-design simulation with the covariance factor kept for repeated draws.
pub struct FullSimulator {
    design: Design,
    mean: Vec<f64>,
    sampler: Sampler,
}

impl FullSimulator {
    pub fn new(gp: &PosteriorGp, g: &Design) -> Result<Self> {
        Self::with_cap(gp, g, DEFAULT_SIMULATION_CAP)
    }

    pub fn with_cap(gp: &PosteriorGp, g: &Design, cap: usize) -> Result<Self> {
        check_dim(gp.dim(), g.dim())?;
        check_cap(g.len(), cap)?;
        if g.is_empty() {
            return Err(Error::InvalidArgument("simulation design is empty".into()));
        }
        let sampler = Sampler::new(&gp.cov_matrix(g, g)?, gp.resolution(), gp.variance())?;
        Ok(Self { design: g.clone(), mean: gp.mean_at(g)?, sampler })
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Result<FieldEnsemble> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one realization".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = standard_normals(self.design.len(), n, &mut rng);
        let y = self.sampler.draw(&self.mean, &xi);
        FieldEnsemble::new(self.design.clone(), realization_major(&y), n, Provenance::FullDesign)
    }
}

/// Quasi-realization simulator with the weight matrix kept for repeated draws.
pub struct QuasiSimulator {
    design: Design,
    m: usize,
    mean_e: Vec<f64>,
    chol: Mat<f64>,
    b: Mat<f64>,
    a: Vec<f64>,
}

impl QuasiSimulator {
    pub fn new(pred: &AffinePredictor, g: &Design) -> Result<Self> {
        check_dim(pred.gp().dim(), g.dim())?;
        let m = pred.points().len();
        check_cap(m, DEFAULT_SIMULATION_CAP)?;
        if g.is_empty() {
            return Err(Error::InvalidArgument("prediction design is empty".into()));
        }
        let (b, a) = pred.weight_matrix(g)?;
        Ok(Self {
            design: g.clone(),
            m,
            mean_e: pred.mean_at_points().to_vec(),
            chol: pred.chol().clone(),
            b,
            a,
        })
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Result<FieldEnsemble> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one realization".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = standard_normals(self.m, n, &mut rng);
        let ze = correlate(&self.mean_e, &self.chol, &xi);
        let mut y = Mat::from_fn(self.design.len(), n, |j, _| self.a[j]);
        matmul(y.as_mut(), Accum::Add, self.b.transpose(), ze.as_ref(), 1.0, Par::Seq);
        FieldEnsemble::new(self.design.clone(), realization_major(&y), n, Provenance::QuasiRealization(self.m))
    }
}

/// Paired full and quasi ensembles sharing the same `Z(E)` draws.
///
/// The full draw is completed as `Z(g) | Z(E)`, so the pair has the joint
/// law of `(Z, Z~)` on `g`.
pub fn simulate_coupled(
    pred: &AffinePredictor,
    g: &Design,
    n: usize,
    seed: u64,
) -> Result<(FieldEnsemble, FieldEnsemble)> {
    let gp: &Arc<PosteriorGp> = pred.gp();
    check_dim(gp.dim(), g.dim())?;
    check_cap(g.len(), DEFAULT_SIMULATION_CAP)?;
    if n == 0 || g.is_empty() {
        return Err(Error::InvalidArgument("need at least one realization and one point".into()));
    }
    let m = pred.points().len();
    let r = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = standard_normals(m, n, &mut rng);
    let xi2 = standard_normals(r, n, &mut rng);
    let ze = correlate(pred.mean_at_points(), pred.chol(), &xi);

    let (b, a) = pred.weight_matrix(g)?;
    let mut quasi = Mat::from_fn(r, n, |j, _| a[j]);
    matmul(quasi.as_mut(), Accum::Add, b.transpose(), ze.as_ref(), 1.0, Par::Seq);

    // Z(g) = m(g) + Q' xi + chol(K_n(g,g) - Q'Q) xi2,  Q = L_E^{-1} K_n(E, g)
    let mut resid = gp.cov_matrix(g, g)?;
    let mut full = Mat::zeros(r, n);
    let mean_g = gp.mean_at(g)?;
    if m > 0 {
        let q = forward_solve_mat(pred.chol().as_ref(), gp.cov_matrix(pred.points(), g)?);
        matmul(resid.as_mut(), Accum::Add, q.transpose(), q.as_ref(), -1.0, Par::Seq);
        matmul(full.as_mut(), Accum::Replace, q.transpose(), xi.as_ref(), 1.0, Par::Seq);
    }
    let sampler = Sampler::new(&resid, gp.resolution(), gp.variance())?;
    let full = {
        let base = realization_major(&full);
        let extra = realization_major(&sampler.draw(&mean_g, &xi2));
        base.iter().zip(&extra).map(|(a, b)| a + b).collect()
    };
    Ok((
        FieldEnsemble::new(g.clone(), full, n, Provenance::FullDesign)?,
        FieldEnsemble::new(g.clone(), realization_major(&quasi), n, Provenance::QuasiRealization(m))?,
    ))
}

/// Thresholds every realization.
pub fn excursions(ens: &FieldEnsemble, exc: ExcursionSpec) -> ExcursionEnsemble {
    let masks = ens.values().iter().map(|&v| exc.contains(v)).collect();
    ExcursionEnsemble { design: ens.design().clone(), masks, n: ens.n_realizations(), exc }
}

/// Per-node summary table: coordinates, sample mean and sample variance.
pub fn write_summary_csv<W: Write>(ens: &FieldEnsemble, mut out: W) -> Result<()> {
    let d = ens.design().dim();
    let head: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    writeln!(out, "{},mean,var", head.join(","))?;
    let n = ens.n_realizations() as f64;
    for (j, x) in ens.design().rows().enumerate() {
        let col = ens.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = if col.len() > 1 { col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{mean},{var}", coords.join(","))?;
    }
    Ok(())
}
