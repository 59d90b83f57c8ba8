//! Shared helpers for the integration tests: independent numerical oracles
//! and small random models.
#![allow(dead_code)]

use std::sync::Arc;

use exset::designs::Design;
use exset::gp::{posterior, Observations, PosteriorGp};
use exset::{KernelFamily, KernelSpec, MeanSpec};
use rand::Rng;

/// Adaptive Gauss-Kronrod (7/15) quadrature of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> f64 {
    fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
        const XK: [f64; 8] = [
            0.991455371120812639206854697526329,
            0.949107912342758524526189684047851,
            0.864864423359769072789712788640926,
            0.741531185599394439863864773280788,
            0.586087235467691130294144845693013,
            0.405845151377397166906606412076961,
            0.207784955007898467600689403773245,
            0.000000000000000000000000000000000,
        ];
        const WK: [f64; 8] = [
            0.022935322010529224963732008058970,
            0.063092092629978553290700663189204,
            0.104790010322250183839876322541518,
            0.140653259715525918745189590510238,
            0.169004726639267902826583426598550,
            0.190350578064785409913256402421014,
            0.204432940075298892414161999234649,
            0.209482141084727828012999174891714,
        ];
        const WG: [f64; 4] = [
            0.129484966168869693270611432679082,
            0.279705391489276667901467771423780,
            0.381830050505118944950369775488975,
            0.417959183673469387755102040816327,
        ];
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let (f1, f2) = (f(c - h * XK[j]), f(c + h * XK[j]));
            k += WK[j] * (f1 + f2);
            if j % 2 == 1 {
                g += WG[j / 2] * (f1 + f2);
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn rec<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth > 40 || (b - a).abs() < 1e-12 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// `P(X1 <= h, X2 <= k)` for a standard bivariate normal with correlation
/// `r`, by nested adaptive quadrature of the joint density.
pub fn bvn_quadrature(h: f64, k: f64, r: f64) -> f64 {
    let lo = -12.0;
    if h <= lo || k <= lo {
        return 0.0;
    }
    let det = 1.0 - r * r;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let mut outer = |x: f64| {
        // the conditional law of X2 given x is centred at r x
        let centre = r * x;
        let sd = det.sqrt();
        let a = lo.max(centre - 12.0 * sd);
        if k <= a {
            return 0.0;
        }
        let mut inner = |y: f64| norm * (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * det)).exp();
        integrate(&mut inner, a, k, 1e-14)
    };
    integrate(&mut outer, lo, h, 1e-13)
}

/// Fixed smooth response used to build random posteriors.
pub fn response(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| ((i as f64 + 1.5) * v * 3.0).sin()).sum::<f64>() + 0.3 * x[0]
}

pub fn random_design<R: Rng>(rng: &mut R, dim: usize, n: usize) -> Design {
    let pts: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    Design::explicit(dim, pts).unwrap()
}

/// Random points kept apart so that no factorization needs jitter. The
/// separation starts at `sep` and shrinks when the space runs out.
pub fn separated<R: Rng>(rng: &mut R, dim: usize, n: usize, sep: f64, avoid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut sep = sep;
    let mut misses = 0;
    while pts.len() < n {
        let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let far = |q: &Vec<f64>| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= sep;
        if pts.iter().all(far) && avoid.iter().all(far) {
            pts.push(p);
        } else {
            misses += 1;
            if misses % 1000 == 0 {
                sep *= 0.8;
            }
        }
    }
    pts
}

/// A posterior with random Matérn hyperparameters conditioned on `n` random
/// observations of [`response`].
pub fn random_gp<R: Rng>(rng: &mut R, dim: usize, n: usize, estimated_mean: bool) -> Arc<PosteriorGp> {
    let x = random_design(rng, dim, n);
    let obs = Observations::from_fn(x, |p| Ok(response(p))).unwrap();
    let family = if rng.random::<bool>() { KernelFamily::Matern32 } else { KernelFamily::Matern52 };
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.15..0.6)).collect();
    let kernel = KernelSpec::new(family, rng.random_range(0.5..2.0), ls).unwrap();
    let mean = if estimated_mean { MeanSpec::unknown() } else { MeanSpec::known(0.2) };
    Arc::new(posterior(obs, kernel, mean).unwrap())
}

/// Dense lower Cholesky factor, `None` if `a` is not numerically positive definite.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
pub fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kriging from scratch on a full data set, with either a known constant
/// mean or a flat prior on it (universal kriging).
pub struct DirectKriging {
    kernel: KernelSpec,
    x: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    kinv_y: Vec<f64>,
    kinv_1: Vec<f64>,
    one_kinv_1: f64,
    beta: f64,
    known: bool,
}

impl DirectKriging {
    pub fn new(kernel: KernelSpec, x: Vec<Vec<f64>>, y: &[f64], known_mean: Option<f64>) -> Self {
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| kernel.cov(a, b)).collect()).collect();
        let l = cholesky(&k).expect("kernel matrix must be positive definite");
        let ones = vec![1.0; x.len()];
        let kinv_1 = chol_solve(&l, &ones);
        let one_kinv_1 = kinv_1.iter().sum::<f64>();
        let beta = known_mean.unwrap_or_else(|| dot(&kinv_1, y) / one_kinv_1);
        let resid: Vec<f64> = y.iter().map(|v| v - beta).collect();
        let kinv_y = chol_solve(&l, &resid);
        Self { kernel, x, l, kinv_y, kinv_1, one_kinv_1, beta, known: known_mean.is_some() }
    }

    fn kvec(&self, p: &[f64]) -> Vec<f64> {
        self.x.iter().map(|a| self.kernel.cov(a, p)).collect()
    }

    pub fn mean(&self, p: &[f64]) -> f64 {
        self.beta + dot(&self.kvec(p), &self.kinv_y)
    }

    pub fn cov(&self, p: &[f64], q: &[f64]) -> f64 {
        let (kp, kq) = (self.kvec(p), self.kvec(q));
        let w = chol_solve(&self.l, &kq);
        let mut c = self.kernel.cov(p, q) - dot(&kp, &w);
        if !self.known {
            let up = 1.0 - dot(&kp, &self.kinv_1);
            let uq = 1.0 - dot(&kq, &self.kinv_1);
            c += up * uq / self.one_kinv_1;
        }
        c
    }
}

/// Euclidean distance transform by exhaustive search on a 2-D `q x q` grid,
/// in units of the domain.
pub fn brute_force_edt(q: usize, mask: &[bool]) -> Vec<f64> {
    let set: Vec<(i64, i64)> =
        (0..q * q).filter(|&k| mask[k]).map(|k| ((k / q) as i64, (k % q) as i64)).collect();
    (0..q * q)
        .map(|k| {
            if set.is_empty() {
                return 2f64.sqrt();
            }
            let (i, j) = ((k / q) as i64, (k % q) as i64);
            let best = set.iter().map(|&(a, b)| (a - i).pow(2) + (b - j).pow(2)).min().unwrap();
            (best as f64).sqrt() / q as f64
        })
        .collect()
}

/// Frequency with which `x` is classified differently by the field and by its
/// simple-kriging reconstruction from `em`, over `draws` joint posterior samples.
pub fn paired_misclassification<R: Rng>(
    gp: &PosteriorGp,
    threshold: f64,
    x: &[f64],
    em: &[Vec<f64>],
    draws: usize,
    rng: &mut R,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut pts = vec![x.to_vec()];
    pts.extend(em.iter().cloned());
    let n = pts.len();
    let c: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| gp.cov(a, b).unwrap()).collect()).collect();
    let mu: Vec<f64> = pts.iter().map(|p| gp.mean(p).unwrap()).collect();
    let l = cholesky(&c).expect("joint covariance must be positive definite");
    // simple-kriging weights of x on E under the posterior covariance
    let cee: Vec<Vec<f64>> = (1..n).map(|i| (1..n).map(|j| c[i][j]).collect()).collect();
    let w = chol_solve(&cholesky(&cee).unwrap(), &c[0][1..]);
    let mut z = vec![0.0; n];
    let mut miss = 0usize;
    for _ in 0..draws {
        let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..n {
            z[i] = mu[i] + (0..=i).map(|k| l[i][k] * u[k]).sum::<f64>();
        }
        let recon = mu[0] + (1..n).map(|i| w[i - 1] * (z[i] - mu[i])).sum::<f64>();
        if (z[0] >= threshold) != (recon >= threshold) {
            miss += 1;
        }
    }
    miss as f64 / draws as f64
}
