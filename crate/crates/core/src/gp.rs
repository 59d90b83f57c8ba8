//! Gaussian process posteriors from noise-free observations.
//!
//! With an unknown constant mean the posterior is the ordinary-kriging one:
//! writing `K = k(X, X)`, `L = chol(K)`, `w = L^{-1} 1`, `v(x) = L^{-1} k(X, x)`
//! and `u(x) = 1 - w.v(x)`,
//!
//! ```text
//! m_n(x)     = beta + v(x).(L^{-1} y - beta w)
//! K_n(x, x') = k(x, x') - v(x).v(x') + u(x) u(x') / (w.w)
//! ```
//!
//! The last term disappears when the mean is known.

use std::fmt::Write as _;
use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::designs::{random_lhs, sq_dist, Design};
use crate::error::{Error, Result};
use crate::kernels::{check_dim, kernel_matrix, KernelFamily, KernelSpec, MeanSpec};
use crate::linalg::{
    backward_solve_transposed, forward_solve, forward_solve_mat, GrowingCholesky, JITTER_LADDER,
};
use crate::optim::{projected_bfgs, BfgsOptions};

/// Squared distance under which two inputs count as the same point.
const DUPLICATE_SQ_DIST: f64 = 1e-24;

/// Noise-free evaluations `y_i = f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    x: Design,
    y: Vec<f64>,
}

impl Observations {
    pub fn new(x: Design, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("no observations".into()));
        }
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!("{} points but {} responses", x.len(), y.len())));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite response {v}")));
        }
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                if sq_dist(x.point(i), x.point(j)) <= DUPLICATE_SQ_DIST {
                    return Err(Error::InvalidArgument(format!("observations {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { x, y })
    }

    /// Evaluates `f` on every point of `x`.
    pub fn from_fn(x: Design, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Self> {
        let y = x.rows().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(x, y)
    }

    pub fn x(&self) -> &Design {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

/// Cholesky factor of `a`, first without jitter and then up the ladder.
///
/// The exact factor is only accepted when every pivot exceeds
/// `1e-12 * scale`, so near-singular systems still get regularized.
pub(crate) fn factor(a: &Mat<f64>, scale: f64) -> Result<(Mat<f64>, f64)> {
    if let Ok(llt) = a.llt(Side::Lower) {
        let l = llt.L().to_owned();
        let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-12 * scale {
            return Ok((l, 0.0));
        }
    }
    let n = a.nrows();
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last = jitter;
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Ok(llt) = m.llt(Side::Lower) {
            return Ok((llt.L().to_owned(), jitter));
        }
    }
    Err(Error::NotPositiveDefinite { size: n, jitter: last })
}

/// Per-point quantities reused by many covariance evaluations.
#[derive(Debug, Clone)]
pub struct PointParts {
    /// `L^{-1} k(X, x)`
    pub v: Vec<f64>,
    /// `1 - w.v`, zero for a known mean.
    pub u: f64,
}

/// Posterior field conditioned on the observations.
#[derive(Debug, Clone)]
pub struct PosteriorGp {
    kernel: KernelSpec,
    mean: MeanSpec,
    obs: Observations,
    chol: Mat<f64>,
    jitter: f64,
    beta_hat: f64,
    /// `L^{-1}(y - beta 1)`
    resid: Vec<f64>,
    /// `L^{-1} 1`
    w: Vec<f64>,
    ww: f64,
}

/// Ordinary (unknown mean) or simple (known mean) kriging posterior.
pub fn posterior(obs: Observations, kernel: KernelSpec, mean: MeanSpec) -> Result<PosteriorGp> {
    PosteriorGp::new(obs, kernel, mean)
}

impl PosteriorGp {
    pub fn new(obs: Observations, kernel: KernelSpec, mean: MeanSpec) -> Result<Self> {
        check_dim(kernel.dim(), obs.dim())?;
        let k = kernel_matrix(&kernel, obs.x(), obs.x())?;
        let (chol, jitter) = factor(&k, kernel.variance())?;
        let n = obs.len();
        let mut w = vec![1.0; n];
        forward_solve(chol.as_ref(), &mut w);
        let mut ly = obs.y().to_vec();
        forward_solve(chol.as_ref(), &mut ly);
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let beta_hat = if mean.estimated {
            w.iter().zip(&ly).map(|(a, b)| a * b).sum::<f64>() / ww
        } else {
            mean.constant
        };
        let resid = ly.iter().zip(&w).map(|(a, b)| a - beta_hat * b).collect();
        Ok(Self { kernel, mean, obs, chol, jitter, beta_hat, resid, w, ww })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mean_spec(&self) -> MeanSpec {
        self.mean
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    /// Diagonal jitter added to the observation covariance (0 if none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn variance(&self) -> f64 {
        self.kernel.variance()
    }

    /// Variances below this are indistinguishable from zero for this model.
    pub fn resolution(&self) -> f64 {
        1e-12 * self.kernel.variance() + 10.0 * self.jitter
    }

    /// `K^{-1}(y - beta 1)`, the weights of the mean predictor.
    pub fn alpha(&self) -> Vec<f64> {
        let mut a = self.resid.clone();
        backward_solve_transposed(self.chol.as_ref(), &mut a);
        a
    }

    pub fn parts(&self, x: &[f64]) -> PointParts {
        let xs = self.obs.x();
        let mut v: Vec<f64> = xs.rows().map(|xi| self.kernel.cov(xi, x)).collect();
        forward_solve(self.chol.as_ref(), &mut v);
        let u = if self.mean.estimated { 1.0 - dot(&self.w, &v) } else { 0.0 };
        PointParts { v, u }
    }

    #[inline]
    pub fn mean_from_parts(&self, p: &PointParts) -> f64 {
        self.beta_hat + dot(&p.v, &self.resid)
    }

    #[inline]
    pub fn cov_from_parts(&self, x: &[f64], px: &PointParts, y: &[f64], py: &PointParts) -> f64 {
        let mut c = self.kernel.cov(x, y) - dot(&px.v, &py.v);
        if self.mean.estimated {
            c += px.u * py.u / self.ww;
        }
        c
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.mean_from_parts(&self.parts(x)))
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        Ok(self.cov_from_parts(x, &self.parts(x), y, &self.parts(y)))
    }

    /// Posterior variance, clamped at zero.
    pub fn var(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cov(x, x)?.max(0.0))
    }

    pub fn mean_at(&self, g: &Design) -> Result<Vec<f64>> {
        check_dim(self.dim(), g.dim())?;
        let v = self.solve_cross(g)?;
        Ok((0..g.len())
            .map(|j| self.beta_hat + (0..self.obs.len()).map(|i| v[(i, j)] * self.resid[i]).sum::<f64>())
            .collect())
    }

    /// `L^{-1} k(X, g)` as an `n x r` matrix.
    fn solve_cross(&self, g: &Design) -> Result<Mat<f64>> {
        let k = kernel_matrix(&self.kernel, self.obs.x(), g)?;
        Ok(forward_solve_mat(self.chol.as_ref(), k))
    }

    fn u_row(&self, v: &Mat<f64>) -> Vec<f64> {
        (0..v.ncols())
            .map(|j| {
                if self.mean.estimated {
                    1.0 - (0..v.nrows()).map(|i| self.w[i] * v[(i, j)]).sum::<f64>()
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Posterior covariance matrix `K_n(a, b)`.
    pub fn cov_matrix(&self, a: &Design, b: &Design) -> Result<Mat<f64>> {
        check_dim(self.dim(), a.dim())?;
        check_dim(self.dim(), b.dim())?;
        let mut k = kernel_matrix(&self.kernel, a, b)?;
        let va = self.solve_cross(a)?;
        let same = std::ptr::eq(a, b);
        let vb_owned;
        let vb = if same {
            &va
        } else {
            vb_owned = self.solve_cross(b)?;
            &vb_owned
        };
        matmul(k.as_mut(), Accum::Add, va.transpose(), vb.as_ref(), -1.0, Par::Seq);
        if self.mean.estimated {
            let ua = self.u_row(&va);
            let ub = if same { ua.clone() } else { self.u_row(vb) };
            for j in 0..b.len() {
                for i in 0..a.len() {
                    k[(i, j)] += ua[i] * ub[j] / self.ww;
                }
            }
        }
        Ok(k)
    }

    /// Versioned plain-text serialization (hyperparameters and data).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "exset-gp v1");
        let _ = writeln!(s, "family {}", self.kernel.family().name());
        let _ = writeln!(s, "variance {:e}", self.kernel.variance());
        let ls: Vec<String> = self.kernel.lengthscales().iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "lengthscales {}", ls.join(" "));
        let kind = if self.mean.estimated { "estimated" } else { "known" };
        let _ = writeln!(s, "mean {:e} {kind}", self.beta_hat);
        let _ = writeln!(s, "data {} {}", self.obs.len(), self.dim());
        for (x, y) in self.obs.x().rows().zip(self.obs.y()) {
            let cells: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }

    /// Parses [`PosteriorGp::to_text`] output and rebuilds the posterior.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (i, l) = lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") })?;
            Ok((i + 1, l.split_whitespace().collect()))
        };
        let num = |line: usize, s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line, msg: format!("not a number: {s}") })
        };
        let (line, head) = next("header")?;
        if head != ["exset-gp", "v1"] {
            return Err(Error::Parse { line, msg: "expected 'exset-gp v1'".into() });
        }
        let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
            let (line, toks) = next(key)?;
            if toks.first() != Some(&key) {
                return Err(Error::Parse { line, msg: format!("expected '{key}'") });
            }
            Ok((line, toks[1..].iter().map(|s| s.to_string()).collect()))
        };
        let (line, fam) = field("family")?;
        let family = KernelFamily::parse(fam.first().map(String::as_str).unwrap_or(""))
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let (line, var) = field("variance")?;
        let variance = num(line, var.first().map(String::as_str).unwrap_or(""))?;
        let (line, ls) = field("lengthscales")?;
        let lengthscales = ls.iter().map(|s| num(line, s)).collect::<Result<Vec<_>>>()?;
        let (line, mean) = field("mean")?;
        if mean.len() != 2 {
            return Err(Error::Parse { line, msg: "expected 'mean <value> estimated|known'".into() });
        }
        let constant = num(line, &mean[0])?;
        let mean = match mean[1].as_str() {
            "estimated" => MeanSpec::unknown(),
            "known" => MeanSpec::known(constant),
            other => return Err(Error::Parse { line, msg: format!("unknown mean kind {other}") }),
        };
        let (line, dims) = field("data")?;
        if dims.len() != 2 {
            return Err(Error::Parse { line, msg: "expected 'data <n> <d>'".into() });
        }
        let n = num(line, &dims[0])? as usize;
        let d = num(line, &dims[1])? as usize;
        let mut pts = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (line, toks) = next("data row")?;
            if toks.len() != d + 1 {
                return Err(Error::Parse { line, msg: format!("expected {} columns", d + 1) });
            }
            for t in &toks[..d] {
                pts.push(num(line, t)?);
            }
            y.push(num(line, toks[d])?);
        }
        let kernel = KernelSpec::new(family, variance, lengthscales)?;
        let obs = Observations::new(Design::explicit(d, pts)?, y)?;
        Self::new(obs, kernel, mean)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Maximum likelihood

/// Result of [`fit_mle`].
#[derive(Debug, Clone)]
pub struct MleFit {
    pub kernel: KernelSpec,
    pub mean: MeanSpec,
    pub loglik: f64,
    /// False when no local search improved on its starting point.
    pub improved: bool,
}

/// Concentrated log-likelihood in the lengthscales, with the constant mean
/// (when `estimate_mean`) and the variance profiled out.
///
/// Returns `(loglik, beta_hat, sigma2_hat)`.
pub fn concentrated_loglik(
    obs: &Observations,
    family: KernelFamily,
    lengthscales: &[f64],
    mean: MeanSpec,
) -> Result<(f64, f64, f64)> {
    let spec = KernelSpec::new(family, 1.0, lengthscales.to_vec())?;
    check_dim(spec.dim(), obs.dim())?;
    let r = kernel_matrix(&spec, obs.x(), obs.x())?;
    let (l, _) = factor(&r, 1.0)?;
    let n = obs.len();
    let mut w = vec![1.0; n];
    forward_solve(l.as_ref(), &mut w);
    let mut ly = obs.y().to_vec();
    forward_solve(l.as_ref(), &mut ly);
    let beta = if mean.estimated { dot(&w, &ly) / dot(&w, &w) } else { mean.constant };
    let sse: f64 = ly.iter().zip(&w).map(|(a, b)| (a - beta * b).powi(2)).sum();
    let sigma2 = sse / n as f64;
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let nf = n as f64;
    let ll = -0.5 * nf * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * logdet - 0.5 * nf;
    Ok((ll, beta, sigma2))
}

/// Maximum-likelihood lengthscales (box `bounds` in unit-cube units, searched
/// in log scale), with mean and variance profiled analytically.
pub fn fit_mle(
    obs: &Observations,
    family: KernelFamily,
    bounds: (f64, f64),
    restarts: usize,
    seed: u64,
) -> Result<MleFit> {
    fit_mle_with_mean(obs, family, MeanSpec::unknown(), bounds, restarts, seed)
}

pub fn fit_mle_with_mean(
    obs: &Observations,
    family: KernelFamily,
    mean: MeanSpec,
    bounds: (f64, f64),
    restarts: usize,
    seed: u64,
) -> Result<MleFit> {
    let d = obs.dim();
    if obs.len() < d + 2 {
        return Err(Error::InvalidArgument(format!("MLE needs at least {} observations, got {}", d + 2, obs.len())));
    }
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid lengthscale bounds ({lo}, {hi})")));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let ymin = obs.y().iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = obs.y().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ymax - ymin <= 1e-12 * ymax.abs().max(ymin.abs()).max(1.0) {
        // constant data: the likelihood is unbounded as the variance goes to zero
        let c = if mean.estimated { obs.y()[0] } else { mean.constant };
        let sigma2 = if mean.estimated { f64::MIN_POSITIVE.sqrt() } else { ((c - obs.y()[0]).powi(2)).max(f64::MIN_POSITIVE.sqrt()) };
        let ls = vec![(0.5 * (llo + lhi)).exp(); d];
        let mean = if mean.estimated { MeanSpec { constant: c, estimated: true } } else { mean };
        return Ok(MleFit { kernel: KernelSpec::new(family, sigma2, ls)?, mean, loglik: f64::INFINITY, improved: false });
    }

    let objective = |t: &[f64]| -> f64 {
        let ls: Vec<f64> = t.iter().map(|v| v.exp()).collect();
        match concentrated_loglik(obs, family, &ls, mean) {
            Ok((ll, _, _)) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restarts = restarts.max(1);
    let mut starts = random_lhs(d, restarts, &mut rng);
    for v in starts.iter_mut() {
        *v = llo + *v * (lhi - llo);
    }
    // make sure the middle of the box is always tried
    starts.extend(std::iter::repeat_n(0.5 * (llo + lhi), d));
    let _ = rng.random::<u64>();

    let lower = vec![llo; d];
    let upper = vec![lhi; d];
    let opts = BfgsOptions { max_evals: 60 * (d + 1), step: 1e-5, tol: 1e-7 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut improved = false;
    for x0 in starts.chunks_exact(d) {
        let f0 = objective(x0);
        let res = projected_bfgs(objective, x0, &lower, &upper, &opts);
        if res.f < f0 {
            improved = true;
        }
        let (f, x) = if res.f <= f0 { (res.f, res.x) } else { (f0, x0.to_vec()) };
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    let (f, t) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::NotPositiveDefinite { size: obs.len(), jitter: JITTER_LADDER[2] });
    }
    let ls: Vec<f64> = t.iter().map(|v| v.exp()).collect();
    let (ll, beta, sigma2) = concentrated_loglik(obs, family, &ls, mean)?;
    let mean = if mean.estimated { MeanSpec { constant: beta, estimated: true } } else { mean };
    Ok(MleFit { kernel: KernelSpec::new(family, sigma2, ls)?, mean, loglik: ll, improved })
}

// ---------------------------------------------------------------------------
// Sequential conditioning

/// A posterior further conditioned on extra points, maintained by rank-one
/// updates of the Cholesky factor of `K_n(E, E)`.
///
/// Points added without a value ("pseudo" observations) only tighten the
/// covariance; the mean is left unchanged there.
#[derive(Debug, Clone)]
pub struct GpState {
    gp: Arc<PosteriorGp>,
    points: Design,
    parts: Vec<PointParts>,
    chol: GrowingCholesky,
    /// Innovations divided by the pivots; zero for pseudo points.
    delta: Vec<f64>,
}

impl GpState {
    pub fn new(gp: Arc<PosteriorGp>) -> Self {
        let d = gp.dim();
        Self { gp, points: Design::empty(d), parts: Vec::new(), chol: GrowingCholesky::new(), delta: Vec::new() }
    }

    pub fn gp(&self) -> &Arc<PosteriorGp> {
        &self.gp
    }

    pub fn points(&self) -> &Design {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn chol(&self) -> &GrowingCholesky {
        &self.chol
    }

    /// `L_E^{-1} K_n(E, x)` given the posterior parts of `x`.
    pub fn cross_from_parts(&self, x: &[f64], px: &PointParts) -> Vec<f64> {
        let kx: Vec<f64> = self
            .points
            .rows()
            .zip(&self.parts)
            .map(|(e, pe)| self.gp.cov_from_parts(e, pe, x, px))
            .collect();
        self.chol.solve(&kx)
    }

    pub fn cross(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.gp.dim(), x.len())?;
        Ok(self.cross_from_parts(x, &self.gp.parts(x)))
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        let px = self.gp.parts(x);
        let z = self.cross(x)?;
        Ok(self.gp.mean_from_parts(&px) + dot(&z, &self.delta))
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.gp.dim(), x.len())?;
        check_dim(self.gp.dim(), y.len())?;
        let (px, py) = (self.gp.parts(x), self.gp.parts(y));
        let zx = self.cross_from_parts(x, &px);
        let zy = self.cross_from_parts(y, &py);
        Ok(self.gp.cov_from_parts(x, &px, y, &py) - dot(&zx, &zy))
    }

    /// Appends `point` in place. `observed` carries its value, if known.
    pub fn push(&mut self, point: &[f64], observed: Option<f64>) -> Result<()> {
        check_dim(self.gp.dim(), point.len())?;
        let pe = self.gp.parts(point);
        let l = self.cross_from_parts(point, &pe);
        let schur = self.gp.cov_from_parts(point, &pe, point, &pe) - dot(&l, &l);
        let innovation = match observed {
            Some(y) => {
                if !y.is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite value {y}")));
                }
                y - self.gp.mean_from_parts(&pe) - dot(&l, &self.delta)
            }
            None => 0.0,
        };
        self.chol.push(l, schur, self.gp.resolution())?;
        self.delta.push(innovation / self.chol.diag(self.chol.len() - 1));
        self.points.push(point)?;
        self.parts.push(pe);
        Ok(())
    }
}

/// Conditions `state` on one more point, returning the new state.
///
/// With `observed = None` only the covariance is updated.
pub fn update_posterior(state: &GpState, new_point: &[f64], observed: Option<f64>) -> Result<GpState> {
    let mut next = state.clone();
    next.push(new_point, observed)?;
    Ok(next)
}

// ---------------------------------------------------------------------------
// Affine predictors

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrigingMode {
    /// Simple kriging on the conditional field: `b = K_n(E,E)^{-1} K_n(E,x)`.
    SimpleKriging,
    /// Weights constrained to sum to one, trend `a = 0`.
    OrdinaryKriging,
}

/// `Z~(x) = a(x) + b(x)' Z(E)`: reconstruction of the posterior field from
/// its values at the simulation points `E`.
#[derive(Debug, Clone)]
pub struct AffinePredictor {
    gp: Arc<PosteriorGp>,
    em: Design,
    mode: KrigingMode,
    chol: Mat<f64>,
    jitter: f64,
    mean_e: Vec<f64>,
    /// `L_E^{-1} 1` and its squared norm, for the ordinary mode.
    w: Vec<f64>,
    ww: f64,
}

/// Builds the affine predictor for simulation points `em`.
///
/// An empty `em` is accepted in simple-kriging mode (`b` empty, `a = m_n`).
pub fn kriging_weights(gp: &Arc<PosteriorGp>, em: &Design, mode: KrigingMode) -> Result<AffinePredictor> {
    check_dim(gp.dim(), em.dim())?;
    if em.is_empty() && mode == KrigingMode::OrdinaryKriging {
        return Err(Error::Empty("ordinary kriging needs at least one simulation point".into()));
    }
    for i in 0..em.len() {
        for j in i + 1..em.len() {
            if sq_dist(em.point(i), em.point(j)) <= DUPLICATE_SQ_DIST {
                return Err(Error::InvalidArgument(format!("simulation points {i} and {j} coincide")));
            }
        }
    }
    let m = em.len();
    let (chol, jitter) = if m == 0 {
        (Mat::zeros(0, 0), 0.0)
    } else {
        factor(&gp.cov_matrix(em, em)?, gp.variance())?
    };
    let mean_e = gp.mean_at(em)?;
    let mut w = vec![1.0; m];
    forward_solve(chol.as_ref(), &mut w);
    let ww = dot(&w, &w);
    if mode == KrigingMode::OrdinaryKriging && !(ww > 0.0 && ww.is_finite()) {
        return Err(Error::NotPositiveDefinite { size: m, jitter });
    }
    Ok(AffinePredictor { gp: gp.clone(), em: em.clone(), mode, chol, jitter, mean_e, w, ww })
}

impl AffinePredictor {
    pub fn points(&self) -> &Design {
        &self.em
    }

    pub fn mode(&self) -> KrigingMode {
        self.mode
    }

    pub fn gp(&self) -> &Arc<PosteriorGp> {
        &self.gp
    }

    /// Lower Cholesky factor of `K_n(E, E)` (plus [`AffinePredictor::jitter`]).
    pub fn chol(&self) -> &Mat<f64> {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean at the simulation points.
    pub fn mean_at_points(&self) -> &[f64] {
        &self.mean_e
    }

    /// `L_E^{-1} K_n(E, x)`
    fn z(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut k: Vec<f64> = self.em.rows().map(|e| self.gp.cov(e, x)).collect::<Result<_>>()?;
        forward_solve(self.chol.as_ref(), &mut k);
        Ok(k)
    }

    /// Converts `z = L^{-1} k` into weights, in place.
    fn weights_from_z(&self, z: &mut [f64]) {
        if self.mode == KrigingMode::OrdinaryKriging {
            // b = K^{-1}k + K^{-1}1 (1 - 1'K^{-1}k) / (1'K^{-1}1)
            let lam = (1.0 - dot(&self.w, z)) / self.ww;
            for (zi, wi) in z.iter_mut().zip(&self.w) {
                *zi += lam * wi;
            }
        }
        backward_solve_transposed(self.chol.as_ref(), z);
    }

    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.z(x)?;
        self.weights_from_z(&mut z);
        Ok(z)
    }

    pub fn trend(&self, x: &[f64]) -> Result<f64> {
        match self.mode {
            KrigingMode::OrdinaryKriging => Ok(0.0),
            KrigingMode::SimpleKriging => {
                let b = self.weights(x)?;
                Ok(self.gp.mean(x)? - dot(&b, &self.mean_e))
            }
        }
    }

    /// `Var_n[Z~(x)] = b' K_n(E,E) b`.
    pub fn predictor_variance(&self, x: &[f64]) -> Result<f64> {
        let b = self.weights(x)?;
        let mut lb = vec![0.0; b.len()];
        for i in 0..b.len() {
            lb[i] = (i..b.len()).map(|j| self.chol[(j, i)] * b[j]).sum();
        }
        Ok(dot(&lb, &lb))
    }

    /// Weight matrix `B` (m x r) and trend vector `a` over the design `g`.
    pub fn weight_matrix(&self, g: &Design) -> Result<(Mat<f64>, Vec<f64>)> {
        check_dim(self.gp.dim(), g.dim())?;
        let m = self.em.len();
        let mut b = if m == 0 { Mat::zeros(0, g.len()) } else { self.gp.cov_matrix(&self.em, g)? };
        if m > 0 {
            b = forward_solve_mat(self.chol.as_ref(), b);
        }
        let mut col = vec![0.0; m];
        for j in 0..g.len() {
            for i in 0..m {
                col[i] = b[(i, j)];
            }
            self.weights_from_z(&mut col);
            for i in 0..m {
                b[(i, j)] = col[i];
            }
        }
        let a = match self.mode {
            KrigingMode::OrdinaryKriging => vec![0.0; g.len()],
            KrigingMode::SimpleKriging => {
                let mg = self.gp.mean_at(g)?;
                (0..g.len()).map(|j| mg[j] - (0..m).map(|i| b[(i, j)] * self.mean_e[i]).sum::<f64>()).collect()
            }
        };
        Ok((b, a))
    }
}

/// `s^2_{n,m}(x) = K_n(x,x) - K_n(E,x)' K_n(E,E)^{-1} K_n(E,x)`, clamped at 0.
pub fn residual_variance(gp: &PosteriorGp, pred: &AffinePredictor, x: &[f64]) -> Result<f64> {
    let kxx = gp.cov(x, x)?;
    let z = pred.z(x)?;
    Ok((kxx - dot(&z, &z)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::sobol;

    fn toy(n: usize, family: KernelFamily) -> Arc<PosteriorGp> {
        let x = sobol(2, n, 1).unwrap();
        let obs = Observations::from_fn(x, |p| Ok((3.0 * p[0]).sin() + p[1] * p[1])).unwrap();
        let k = KernelSpec::new(family, 1.5, vec![0.3, 0.4]).unwrap();
        Arc::new(posterior(obs, k, MeanSpec::unknown()).unwrap())
    }

    #[test]
    fn single_observation_interpolates() {
        let obs = Observations::new(Design::explicit(1, vec![0.3]).unwrap(), vec![2.0]).unwrap();
        let k = KernelSpec::new(KernelFamily::Matern52, 1.0, vec![0.2]).unwrap();
        let gp = posterior(obs, k, MeanSpec::unknown()).unwrap();
        assert!((gp.mean(&[0.3]).unwrap() - 2.0).abs() < 1e-12);
        assert!(gp.var(&[0.3]).unwrap() < 1e-12);
    }

    #[test]
    fn far_point_variance_has_ordinary_kriging_inflation() {
        let gp = toy(10, KernelFamily::Matern32);
        let obs = gp.observations();
        let kspec = KernelSpec::new(KernelFamily::Matern32, 1.5, vec![1e-3, 1e-3]).unwrap();
        let narrow = posterior(obs.clone(), kspec, MeanSpec::unknown()).unwrap();
        // k(x, X) vanishes: K_n(x,x) = s2 (1 + 1/n) for an identity correlation
        let v = narrow.var(&[0.987, 0.013]).unwrap();
        assert!((v - 1.5 * (1.0 + 1.0 / obs.len() as f64)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn duplicate_observations_rejected() {
        let x = Design::explicit(1, vec![0.1, 0.1]).unwrap();
        assert!(Observations::new(x, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn cov_matrix_matches_pointwise() {
        let gp = toy(8, KernelFamily::Matern52);
        let a = sobol(2, 5, 20).unwrap();
        let b = sobol(2, 4, 40).unwrap();
        let k = gp.cov_matrix(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                assert!((k[(i, j)] - gp.cov(a.point(i), b.point(j)).unwrap()).abs() < 1e-12);
            }
        }
        let m = gp.mean_at(&a).unwrap();
        for i in 0..5 {
            assert!((m[i] - gp.mean(a.point(i)).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn update_then_query_new_point() {
        let gp = toy(8, KernelFamily::Matern52);
        let s = update_posterior(&GpState::new(gp), &[0.41, 0.77], None).unwrap();
        assert!(s.cov(&[0.41, 0.77], &[0.41, 0.77]).unwrap().abs() < 1e-12);
        assert!(update_posterior(&s, &[0.41, 0.77], None).is_err());
    }

    #[test]
    fn observed_update_matches_refit() {
        let gp = toy(8, KernelFamily::Matern32);
        let f = |p: &[f64]| (3.0 * p[0]).sin() + p[1] * p[1];
        let extra = [[0.12, 0.9], [0.66, 0.31]];
        let mut s = GpState::new(gp.clone());
        for e in &extra {
            s.push(e, Some(f(e))).unwrap();
        }
        let mut x = gp.observations().x().clone();
        for e in &extra {
            x.push(e).unwrap();
        }
        let obs = Observations::from_fn(x, |p| Ok(f(p))).unwrap();
        let full = posterior(obs, gp.kernel().clone(), MeanSpec::unknown()).unwrap();
        for p in sobol(2, 30, 100).unwrap().rows() {
            assert!((s.mean(p).unwrap() - full.mean(p).unwrap()).abs() < 1e-8);
            assert!((s.cov(p, p).unwrap() - full.cov(p, p).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_simple_kriging_weight() {
        let gp = toy(6, KernelFamily::Matern52);
        let e = Design::explicit(2, vec![0.2, 0.8]).unwrap();
        let pred = kriging_weights(&gp, &e, KrigingMode::SimpleKriging).unwrap();
        let x = [0.35, 0.6];
        let b = pred.weights(&x).unwrap();
        let want = gp.cov(&[0.2, 0.8], &x).unwrap() / gp.cov(&[0.2, 0.8], &[0.2, 0.8]).unwrap();
        assert!((b[0] - want).abs() < 1e-12);
    }

    #[test]
    fn ordinary_weights_sum_to_one() {
        let gp = toy(6, KernelFamily::Matern52);
        let e = sobol(2, 7, 50).unwrap();
        let pred = kriging_weights(&gp, &e, KrigingMode::OrdinaryKriging).unwrap();
        for x in sobol(2, 10, 200).unwrap().rows() {
            let s: f64 = pred.weights(x).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
        let b = pred.weights(e.point(3)).unwrap();
        for (i, bi) in b.iter().enumerate() {
            assert!((bi - if i == 3 { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }

    #[test]
    fn text_roundtrip() {
        let gp = toy(7, KernelFamily::Matern32);
        let back = PosteriorGp::from_text(&gp.to_text()).unwrap();
        let x = [0.31, 0.47];
        assert!((back.mean(&x).unwrap() - gp.mean(&x).unwrap()).abs() < 1e-12);
        assert!(PosteriorGp::from_text("exset-gp v2\n").is_err());
    }

    #[test]
    fn constant_data_mle() {
        let x = sobol(2, 6, 1).unwrap();
        let obs = Observations::new(x, vec![4.0; 6]).unwrap();
        let fit = fit_mle(&obs, KernelFamily::Matern52, (0.01, 2.0), 3, 1).unwrap();
        assert_eq!(fit.mean.constant, 4.0);
        assert!(fit.kernel.variance() < 1e-100);
    }
}
