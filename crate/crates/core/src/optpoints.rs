//! Greedy choice of simulation points.
//!
//! Algorithm A adds, one at a time, the point that minimizes the expected
//! distance in measure. Algorithm B instead adds the maximizer of the current
//! integrand `rho`, which is far cheaper since each evaluation touches a
//! single point rather than the whole integration design.

use std::cmp::Ordering;

use rand::seq::index::sample_weighted;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bvn::norm_cdf;
use crate::criterion::CriterionState;
use crate::designs::{sobol, Design};
use crate::error::{Error, Result};
use crate::optim::{genetic, projected_bfgs, BfgsOptions, GaOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    A,
    B,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" | "ALGA" => Ok(Algorithm::A),
            "B" | "ALGB" => Ok(Algorithm::B),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Number of points to add.
    pub m: usize,
    pub algorithm: Algorithm,
    /// Genetic population size (A).
    pub population: usize,
    /// Genetic generations (A).
    pub generations: usize,
    /// Evaluation budget of the final local descent (A).
    pub polish_evals: usize,
    /// Local searches per step (B).
    pub multistarts: usize,
    /// Evaluation budget of each local search (B).
    pub start_evals: usize,
    /// Size of the Sobol' design the starts are drawn from (B).
    pub start_design_size: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn new(m: usize, algorithm: Algorithm, seed: u64) -> Self {
        Self {
            m,
            algorithm,
            population: 40,
            generations: 15,
            polish_evals: 50,
            multistarts: 20,
            start_evals: 40,
            start_design_size: 4096,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("m", self.m),
            ("population", self.population),
            ("generations", self.generations),
            ("multistarts", self.multistarts),
            ("start_design_size", self.start_design_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    /// Objective evaluations spent on this step.
    pub candidate_evals: usize,
    /// Expected distance in measure after the step (A) or the attained
    /// maximum of `rho` (B).
    pub criterion_value: f64,
    /// Bivariate normal CDF evaluations spent on this step.
    pub bvn_evals: u64,
}

#[derive(Debug, Clone)]
pub struct OptimizedPoints {
    pub design: Design,
    pub trace: Vec<StepTrace>,
}

impl OptimizedPoints {
    pub fn bvn_evals(&self) -> u64 {
        self.trace.iter().map(|t| t.bvn_evals).sum()
    }
}

pub fn optimize_points(state: &mut CriterionState, cfg: &OptimizerConfig) -> Result<OptimizedPoints> {
    match cfg.algorithm {
        Algorithm::A => algorithm_a(state, cfg),
        Algorithm::B => algorithm_b(state, cfg),
    }
}

/// Lower value wins; ties go to the lexicographically smaller point.
fn better(f: f64, x: &[f64], best: &Option<(f64, Vec<f64>)>) -> bool {
    match best {
        None => true,
        Some((bf, bx)) => f < *bf || (f == *bf && lex_cmp(x, bx) == Ordering::Less),
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Node indices sorted by decreasing integrand.
fn nodes_by_rho(state: &CriterionState) -> Vec<usize> {
    let rho = state.node_rho();
    let nodes = state.measure().nodes();
    let mut idx: Vec<usize> = (0..rho.len()).collect();
    idx.sort_by(|&i, &j| {
        rho[j].partial_cmp(&rho[i]).unwrap_or(Ordering::Equal).then(lex_cmp(nodes.point(i), nodes.point(j)))
    });
    idx
}

/// Sequential minimization of the expected distance in measure.
pub fn algorithm_a(state: &mut CriterionState, cfg: &OptimizerConfig) -> Result<OptimizedPoints> {
    cfg.validate()?;
    let d = state.gp().dim();
    let lower = vec![0.0; d];
    let upper = vec![1.0; d];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ga = GaOptions { population: cfg.population, generations: cfg.generations, ..GaOptions::default() };
    let bfgs = BfgsOptions { max_evals: cfg.polish_evals, step: 1e-5, tol: 1e-12 };
    let mut trace = Vec::with_capacity(cfg.m);
    let start_m = state.m();
    for step in 1..=cfg.m {
        let before = state.bvn_evaluations();
        let current = state.edm();
        let penalty = current + state.measure().total_mass();
        // the most uncertain nodes seed the population
        let ranked = nodes_by_rho(state);
        let seeds: Vec<Vec<f64>> =
            ranked.iter().take((cfg.population / 4).max(1)).map(|&j| state.measure().nodes().point(j).to_vec()).collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut failure: Option<Error> = None;
        let mut evals = 0usize;
        let view: &CriterionState = state;
        let mut objective = |x: &[f64]| -> f64 {
            evals += 1;
            match view.edm_with(x) {
                Ok(v) => {
                    if better(v, x, &best) {
                        best = Some((v, x.to_vec()));
                    }
                    v
                }
                Err(Error::DegenerateUpdate { .. }) => penalty,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let g = genetic(&mut objective, &lower, &upper, &seeds, &ga, &mut rng);
        if cfg.polish_evals > 0 {
            projected_bfgs(&mut objective, &g.x, &lower, &upper, &bfgs);
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let chosen = match best {
            Some((_, x)) => x,
            None => fallback_node(state, &ranked)?,
        };
        state.add_point(&chosen)?;
        trace.push(StepTrace {
            step,
            candidate_evals: evals,
            criterion_value: state.edm(),
            bvn_evals: state.bvn_evaluations() - before,
        });
    }
    Ok(OptimizedPoints { design: tail(state.points(), start_m), trace })
}

fn tail(points: &Design, from: usize) -> Design {
    let d = points.dim();
    Design::explicit(d, points.as_slice()[from * d..].to_vec()).expect("points lie in the unit cube")
}

/// First node (in the given order) that can still be added.
fn fallback_node(state: &CriterionState, order: &[usize]) -> Result<Vec<f64>> {
    let nodes = state.measure().nodes();
    for &j in order {
        let x = nodes.point(j);
        match state.edm_with(x) {
            Ok(_) => return Ok(x.to_vec()),
            Err(Error::DegenerateUpdate { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateUpdate { variance: 0.0 })
}

/// Sequential maximization of the integrand `rho`, multistarted from points
/// drawn proportionally to `p (1 - p)` on a Sobol' design.
pub fn algorithm_b(state: &mut CriterionState, cfg: &OptimizerConfig) -> Result<OptimizedPoints> {
    cfg.validate()?;
    let gp = state.gp().clone();
    let d = gp.dim();
    let exc = state.exc();
    let lower = vec![0.0; d];
    let upper = vec![1.0; d];
    let starts = sobol(d, cfg.start_design_size, 1)?;
    let weights: Vec<f64> = starts
        .rows()
        .map(|x| {
            let p = gp.parts(x);
            let var = gp.cov_from_parts(x, &p, x, &p);
            if var <= gp.resolution() {
                return 0.0;
            }
            let prob = norm_cdf(exc.sign() * (gp.mean_from_parts(&p) - exc.threshold) / var.sqrt());
            prob * (1.0 - prob)
        })
        .collect();
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    let mut by_weight: Vec<usize> = (0..weights.len()).collect();
    by_weight.sort_by(|&i, &j| {
        weights[j].partial_cmp(&weights[i]).unwrap_or(Ordering::Equal).then(lex_cmp(starts.point(i), starts.point(j)))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bfgs = BfgsOptions { max_evals: cfg.start_evals.max(2 * d + 2), step: 1e-5, tol: 1e-12 };
    let mut trace = Vec::with_capacity(cfg.m);
    let start_m = state.m();
    for step in 1..=cfg.m {
        let before = state.bvn_evaluations();
        let amount = cfg.multistarts.min(positive);
        let picks: Vec<usize> = if amount == 0 {
            Vec::new()
        } else {
            sample_weighted(&mut rng, weights.len(), |i| weights[i], amount)
                .map_err(|e| Error::InvalidArgument(format!("start sampling failed: {e}")))?
                .into_vec()
        };
        let mut candidates: Vec<(f64, Vec<f64>)> = Vec::with_capacity(picks.len());
        let mut failure: Option<Error> = None;
        let mut evals = 0usize;
        for &i in &picks {
            let view: &CriterionState = state;
            let objective = |x: &[f64]| -> f64 {
                evals += 1;
                match view.rho(x) {
                    Ok(v) => -v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            };
            let r = projected_bfgs(objective, starts.point(i), &lower, &upper, &bfgs);
            candidates.push((r.f, r.x));
        }
        if let Some(e) = failure {
            return Err(e);
        }
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(lex_cmp(&a.1, &b.1)));
        let mut chosen = None;
        for (f, x) in &candidates {
            if *f < 0.0 {
                match state.add_point(x) {
                    Ok(()) => {
                        chosen = Some(-f);
                        break;
                    }
                    Err(Error::DegenerateUpdate { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        let value = match chosen {
            Some(v) => v,
            None => {
                let x = fallback_start(state, &starts, &by_weight)?;
                state.add_point(&x)?;
                state.rho(&x)?
            }
        };
        trace.push(StepTrace {
            step,
            candidate_evals: evals,
            criterion_value: value,
            bvn_evals: state.bvn_evaluations() - before,
        });
    }
    Ok(OptimizedPoints { design: tail(state.points(), start_m), trace })
}

fn fallback_start(state: &CriterionState, starts: &Design, order: &[usize]) -> Result<Vec<f64>> {
    for &j in order {
        let x = starts.point(j);
        match state.conditional().cross(x) {
            Ok(_) => {
                let mut probe = state.conditional().clone();
                if probe.push(x, None).is_ok() {
                    return Ok(x.to_vec());
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateUpdate { variance: 0.0 })
}
