//! Derivative-free box-constrained minimizers: a projected BFGS with
//! central-difference gradients and a real-coded genetic search.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Budget of objective evaluations, gradients included.
    pub max_evals: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Stop when the projected gradient's max-norm falls below this.
    pub tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_evals: 200, step: 1e-5, tol: 1e-8 }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Tracks evaluations and the best point seen.
struct Counted<F> {
    f: F,
    evals: usize,
    best: Option<(f64, Vec<f64>)>,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
            self.best = Some((v, x.to_vec()));
        }
        v
    }
}

fn gradient<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let hi = (x[i] + h).min(upper[i]);
        let lo = (x[i] - h).max(lower[i]);
        if hi <= lo {
            continue;
        }
        probe[i] = hi;
        let fp = obj.eval(&probe);
        probe[i] = lo;
        let fm = obj.eval(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (hi - lo);
    }
    g
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// Coordinates sitting on a bound with the gradient pointing outwards are
/// frozen for the step; the inverse-Hessian estimate is reset whenever the
/// search direction fails to descend.
pub fn projected_bfgs<F: FnMut(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &BfgsOptions,
) -> MinimizeResult {
    let n = x0.len();
    let mut obj = Counted { f, evals: 0, best: None };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = obj.eval(&x);
    let mut h = identity(n);
    let mut g = gradient(&mut obj, &x, lower, upper, opts.step);
    while obj.evals + 2 * n + 1 < opts.max_evals && fx.is_finite() {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg < opts.tol {
            break;
        }
        let mut d = direction(&h, &g, &free);
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            d = direction(&h, &g, &free);
        }
        // backtracking along the projected path
        let mut t = 1.0;
        let mut accepted = None;
        while obj.evals < opts.max_evals {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lower, upper);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| s.abs() < 1e-15) {
                break;
            }
            let fnew = obj.eval(&xn);
            if fnew <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, fnew, step));
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                break;
            }
        }
        let Some((xn, fnew, s)) = accepted else { break };
        if obj.evals + 2 * n > opts.max_evals {
            x = xn;
            fx = fnew;
            break;
        }
        let gn = gradient(&mut obj, &xn, lower, upper, opts.step);
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = xn;
        fx = fnew;
        g = gn;
    }
    // the line search may have seen a better point than the last accepted one
    let (bf, bx) = obj.best.take().expect("evaluated at least once");
    if bf < fx {
        MinimizeResult { x: bx, f: bf, evals: obj.evals }
    } else {
        MinimizeResult { x, f: fx, evals: obj.evals }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn direction(h: &[f64], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct GaOptions {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    /// Blend-crossover extension factor.
    pub blend: f64,
    /// Mutation standard deviation as a fraction of the box width.
    pub mutation_sd: f64,
    /// Per-coordinate mutation probability.
    pub mutation_rate: f64,
}

impl Default for GaOptions {
    fn default() -> Self {
        Self { population: 40, generations: 15, tournament: 2, blend: 0.5, mutation_sd: 0.1, mutation_rate: 0.2 }
    }
}

/// Real-coded genetic search: tournament selection, blend crossover,
/// Gaussian mutation and one elite. `seeds` replace the first random
/// individuals of the initial population.
pub fn genetic<F: FnMut(&[f64]) -> f64, R: Rng + ?Sized>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    seeds: &[Vec<f64>],
    opts: &GaOptions,
    rng: &mut R,
) -> MinimizeResult {
    let d = lower.len();
    let pop_size = opts.population.max(2);
    let mut obj = Counted { f, evals: 0, best: None };
    let mut pop: Vec<Vec<f64>> = (0..pop_size)
        .map(|i| match seeds.get(i) {
            Some(s) => {
                let mut s = s.clone();
                project(&mut s, lower, upper);
                s
            }
            None => (0..d).map(|j| lower[j] + rng.random::<f64>() * (upper[j] - lower[j])).collect(),
        })
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|x| obj.eval(x)).collect();
    for _ in 0..opts.generations {
        let elite = argmin(&fit);
        let mut next = vec![pop[elite].clone()];
        let mut next_fit = vec![fit[elite]];
        while next.len() < pop_size {
            let a = &pop[tournament(&fit, opts.tournament, rng)];
            let b = &pop[tournament(&fit, opts.tournament, rng)];
            let mut child: Vec<f64> = (0..d)
                .map(|j| {
                    let (lo, hi) = if a[j] <= b[j] { (a[j], b[j]) } else { (b[j], a[j]) };
                    let ext = opts.blend * (hi - lo);
                    lo - ext + rng.random::<f64>() * (hi - lo + 2.0 * ext)
                })
                .collect();
            for j in 0..d {
                if rng.random::<f64>() < opts.mutation_rate {
                    let z: f64 = StandardNormal.sample(rng);
                    child[j] += z * opts.mutation_sd * (upper[j] - lower[j]);
                }
            }
            project(&mut child, lower, upper);
            next_fit.push(obj.eval(&child));
            next.push(child);
        }
        pop = next;
        fit = next_fit;
    }
    let (f, x) = obj.best.take().expect("population evaluated");
    MinimizeResult { x, f, evals: obj.evals }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn tournament<R: Rng + ?Sized>(fit: &[f64], k: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..k.max(1) {
        let c = rng.random_range(0..fit.len());
        if fit[c] < fit[best] {
            best = c;
        }
    }
    best
}
