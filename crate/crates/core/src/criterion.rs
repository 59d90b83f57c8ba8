//! Pointwise misclassification probability of the affine reconstruction and
//! its integral, the expected distance in measure.
//!
//! With simple kriging on the conditional field the reconstruction has the
//! same mean as `Z`, so at any `x`
//!
//! ```text
//! rho(x) = Phi2(c, S) + Phi2(-c, S),  c = (m - t, t - m),
//! S = [[K, -g], [-g, g]],  g = Var[Z~(x)] = |L_E^{-1} K_n(E, x)|^2
//! ```
//!
//! Below-threshold excursions are handled by negating the field and `t`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::bvn::rho_parts;
use crate::designs::Design;
use crate::error::{Error, Result};
use crate::gp::{dot, GpState, PointParts, PosteriorGp};
use crate::kernels::check_dim;
use crate::simulate::ExcursionEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `T = [t, inf)`
    Above,
    /// `T = (-inf, t]`
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionSpec {
    pub threshold: f64,
    pub direction: Direction,
}

impl ExcursionSpec {
    pub fn above(threshold: f64) -> Self {
        Self { threshold, direction: Direction::Above }
    }

    pub fn below(threshold: f64) -> Self {
        Self { threshold, direction: Direction::Below }
    }

    /// +1 for [`Direction::Above`], -1 otherwise.
    pub fn sign(&self) -> f64 {
        match self.direction {
            Direction::Above => 1.0,
            Direction::Below => -1.0,
        }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        match self.direction {
            Direction::Above => v >= self.threshold,
            Direction::Below => v <= self.threshold,
        }
    }
}

/// Uniform measure of mass `total_mass` represented by quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationMeasure {
    nodes: Design,
    total_mass: f64,
}

impl IntegrationMeasure {
    pub fn new(nodes: Design, total_mass: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("integration measure has no nodes".into()));
        }
        if !(total_mass > 0.0 && total_mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("total mass must be positive, got {total_mass}")));
        }
        Ok(Self { nodes, total_mass })
    }

    /// Lebesgue measure on the unit cube.
    pub fn uniform(nodes: Design) -> Result<Self> {
        Self::new(nodes, 1.0)
    }

    pub fn nodes(&self) -> &Design {
        &self.nodes
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
}

/// Simulation points chosen so far with per-node kriging caches, so that a
/// candidate point costs `O(nodes * (n + m))` to score.
#[derive(Debug)]
pub struct CriterionState {
    cond: GpState,
    exc: ExcursionSpec,
    mu: IntegrationMeasure,
    node_parts: Vec<PointParts>,
    /// `s (m_n(x) - t)` with `s` the direction sign.
    node_c: Vec<f64>,
    node_var: Vec<f64>,
    /// Row `j` holds the `j`-th component of `L_E^{-1} K_n(E, x)` at every node.
    node_z: Vec<Vec<f64>>,
    node_gamma: Vec<f64>,
    node_rho: Vec<f64>,
    bvn_evals: AtomicU64,
}

impl Clone for CriterionState {
    fn clone(&self) -> Self {
        Self {
            cond: self.cond.clone(),
            exc: self.exc,
            mu: self.mu.clone(),
            node_parts: self.node_parts.clone(),
            node_c: self.node_c.clone(),
            node_var: self.node_var.clone(),
            node_z: self.node_z.clone(),
            node_gamma: self.node_gamma.clone(),
            node_rho: self.node_rho.clone(),
            bvn_evals: AtomicU64::new(self.bvn_evals.load(Ordering::Relaxed)),
        }
    }
}

impl CriterionState {
    pub fn new(gp: Arc<PosteriorGp>, exc: ExcursionSpec, mu: IntegrationMeasure) -> Result<Self> {
        check_dim(gp.dim(), mu.nodes().dim())?;
        if exc.threshold.is_nan() {
            return Err(Error::InvalidArgument("threshold is NaN".into()));
        }
        let s = exc.sign();
        let nodes = mu.nodes();
        let node_parts: Vec<PointParts> = nodes.rows().map(|x| gp.parts(x)).collect();
        let node_c = node_parts.iter().map(|p| s * (gp.mean_from_parts(p) - exc.threshold)).collect();
        let node_var = nodes
            .rows()
            .zip(&node_parts)
            .map(|(x, p)| gp.cov_from_parts(x, p, x, p).max(0.0))
            .collect();
        let n = nodes.len();
        let mut state = Self {
            cond: GpState::new(gp),
            exc,
            mu,
            node_parts,
            node_c,
            node_var,
            node_z: Vec::new(),
            node_gamma: vec![0.0; n],
            node_rho: vec![0.0; n],
            bvn_evals: AtomicU64::new(0),
        };
        state.node_rho = state.rho_at_nodes(&state.node_gamma)?;
        Ok(state)
    }

    /// Adds every point of `em` in order.
    pub fn with_points(gp: Arc<PosteriorGp>, exc: ExcursionSpec, mu: IntegrationMeasure, em: &Design) -> Result<Self> {
        let mut s = Self::new(gp, exc, mu)?;
        for e in em.rows() {
            s.add_point(e)?;
        }
        Ok(s)
    }

    pub fn gp(&self) -> &Arc<PosteriorGp> {
        self.cond.gp()
    }

    pub fn exc(&self) -> ExcursionSpec {
        self.exc
    }

    pub fn measure(&self) -> &IntegrationMeasure {
        &self.mu
    }

    /// Simulation points added so far.
    pub fn points(&self) -> &Design {
        self.cond.points()
    }

    pub fn m(&self) -> usize {
        self.cond.len()
    }

    pub fn conditional(&self) -> &GpState {
        &self.cond
    }

    /// `Var_n[Z~(x)]` at every node.
    pub fn node_gamma(&self) -> &[f64] {
        &self.node_gamma
    }

    pub fn node_variance(&self) -> &[f64] {
        &self.node_var
    }

    /// Current integrand at every node.
    pub fn node_rho(&self) -> &[f64] {
        &self.node_rho
    }

    /// Number of bivariate normal CDF evaluations so far.
    pub fn bvn_evaluations(&self) -> u64 {
        self.bvn_evals.load(Ordering::Relaxed)
    }

    fn rho_value(&self, c: f64, var: f64, gamma: f64) -> Result<f64> {
        let res = self.cond.gp().resolution();
        if var <= res {
            return Ok(0.0);
        }
        let g = gamma.clamp(0.0, var);
        if var - g <= 1e-14 * var {
            return Ok(0.0);
        }
        self.bvn_evals.fetch_add(2, Ordering::Relaxed);
        Ok(rho_parts([c, -c], [[var, -g], [-g, g]])?.clamp(0.0, 1.0))
    }

    fn rho_at_nodes(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        (0..gamma.len())
            .into_par_iter()
            .map(|j| self.rho_value(self.node_c[j], self.node_var[j], gamma[j]))
            .collect()
    }

    /// Misclassification probability at an arbitrary point.
    pub fn rho(&self, x: &[f64]) -> Result<f64> {
        let gp = self.cond.gp();
        check_dim(gp.dim(), x.len())?;
        let px = gp.parts(x);
        let c = self.exc.sign() * (gp.mean_from_parts(&px) - self.exc.threshold);
        let var = gp.cov_from_parts(x, &px, x, &px).max(0.0);
        let z = self.cond.cross_from_parts(x, &px);
        self.rho_value(c, var, dot(&z, &z))
    }

    /// Expected distance in measure for the current simulation points.
    pub fn edm(&self) -> f64 {
        self.mu.total_mass * mean(&self.node_rho)
    }

    /// Conditional variance at `e` and the increments `K_{n,m}(e, x)` at every node.
    fn increments(&self, e: &[f64]) -> Result<(f64, Vec<f64>)> {
        let gp = self.cond.gp();
        check_dim(gp.dim(), e.len())?;
        let pe = gp.parts(e);
        let l = self.cond.cross_from_parts(e, &pe);
        let pivot2 = gp.cov_from_parts(e, &pe, e, &pe) - dot(&l, &l);
        if !(pivot2 > gp.resolution()) {
            return Err(Error::DegenerateUpdate { variance: pivot2 });
        }
        let nodes = self.mu.nodes();
        let mut c: Vec<f64> = (0..nodes.len())
            .into_par_iter()
            .map(|j| gp.cov_from_parts(e, &pe, nodes.point(j), &self.node_parts[j]))
            .collect();
        for (li, zi) in l.iter().zip(&self.node_z) {
            for (cj, zj) in c.iter_mut().zip(zi) {
                *cj -= li * zj;
            }
        }
        Ok((pivot2, c))
    }

    /// Expected distance in measure after adding `e`, without committing it.
    ///
    /// Fails with [`Error::DegenerateUpdate`] when `e` carries no new information.
    pub fn edm_with(&self, e: &[f64]) -> Result<f64> {
        let (pivot2, c) = self.increments(e)?;
        let rho: Vec<f64> = (0..c.len())
            .into_par_iter()
            .map(|j| {
                let g = self.node_gamma[j] + c[j] * c[j] / pivot2;
                self.rho_value(self.node_c[j], self.node_var[j], g)
            })
            .collect::<Result<_>>()?;
        Ok(self.mu.total_mass * mean(&rho))
    }

    /// Commits `e` as a new simulation point.
    pub fn add_point(&mut self, e: &[f64]) -> Result<()> {
        let (pivot2, c) = self.increments(e)?;
        let pivot = pivot2.sqrt();
        let z: Vec<f64> = c.iter().map(|v| v / pivot).collect();
        for (g, zj) in self.node_gamma.iter_mut().zip(&z) {
            *g += zj * zj;
        }
        self.node_z.push(z);
        self.cond.push(e, None)?;
        self.node_rho = self.rho_at_nodes(&self.node_gamma)?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Expected distance in measure of `em` as simulation points.
pub fn edm(gp: Arc<PosteriorGp>, exc: ExcursionSpec, mu: IntegrationMeasure, em: &Design) -> Result<f64> {
    Ok(CriterionState::with_points(gp, exc, mu, em)?.edm())
}

/// Monte-Carlo estimate of `E[mu(A delta B)]` from paired ensembles.
pub fn edm_empirical(a: &ExcursionEnsemble, b: &ExcursionEnsemble, mu: &IntegrationMeasure) -> Result<f64> {
    if a.n_realizations() != b.n_realizations() || a.design().len() != b.design().len() {
        return Err(Error::ShapeMismatch(format!(
            "ensembles {}x{} and {}x{}",
            a.n_realizations(),
            a.design().len(),
            b.n_realizations(),
            b.design().len()
        )));
    }
    if a.design() != b.design() {
        return Err(Error::ShapeMismatch("ensembles live on different designs".into()));
    }
    let r = a.design().len();
    let n = a.n_realizations();
    if n == 0 || r == 0 {
        return Err(Error::Empty("empty ensemble".into()));
    }
    let total: usize = (0..n)
        .map(|i| a.mask(i).iter().zip(b.mask(i)).filter(|(x, y)| x != y).count())
        .sum();
    Ok(mu.total_mass() * total as f64 / (n * r) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::sobol;
    use crate::gp::{posterior, Observations};
    use crate::kernels::{KernelFamily, KernelSpec, MeanSpec};

    fn state() -> CriterionState {
        let x = sobol(1, 5, 1).unwrap();
        let obs = Observations::from_fn(x, |p| Ok((6.0 * p[0]).sin())).unwrap();
        let k = KernelSpec::new(KernelFamily::Matern52, 1.0, vec![0.2]).unwrap();
        let gp = Arc::new(posterior(obs, k, MeanSpec::unknown()).unwrap());
        let mu = IntegrationMeasure::uniform(sobol(1, 64, 1000).unwrap()).unwrap();
        CriterionState::new(gp, ExcursionSpec::above(0.3), mu).unwrap()
    }

    #[test]
    fn rho_vanishes_on_points() {
        let mut s = state();
        let obs = s.gp().observations().x().point(2).to_vec();
        assert_eq!(s.rho(&obs).unwrap(), 0.0);
        s.add_point(&[0.37]).unwrap();
        assert_eq!(s.rho(&[0.37]).unwrap(), 0.0);
        assert!(s.rho(&[0.4]).unwrap() > 0.0);
    }

    #[test]
    fn edm_with_matches_commit() {
        let mut s = state();
        let before = s.edm();
        let predicted = s.edm_with(&[0.61]).unwrap();
        s.add_point(&[0.61]).unwrap();
        assert!((predicted - s.edm()).abs() < 1e-15);
        assert!(s.edm() <= before + 1e-12);
    }

    #[test]
    fn all_nodes_as_points_give_zero() {
        let s = state();
        let nodes = s.measure().nodes().clone();
        let full = CriterionState::with_points(s.gp().clone(), s.exc(), s.measure().clone(), &nodes).unwrap();
        assert_eq!(full.edm(), 0.0);
    }

    #[test]
    fn empty_design_uses_mean_predictor() {
        let s = state();
        let gp = s.gp();
        let want: f64 = s
            .measure()
            .nodes()
            .rows()
            .map(|x| {
                let m = gp.mean(x).unwrap();
                let p = crate::bvn::norm_cdf((m - 0.3) / gp.var(x).unwrap().sqrt());
                if m < 0.3 { p } else { 1.0 - p }
            })
            .sum::<f64>()
            / 64.0;
        assert!((s.edm() - want).abs() < 1e-12);
    }

    #[test]
    fn below_is_negated_above() {
        let s = state();
        let mu = s.measure().clone();
        let below = CriterionState::new(s.gp().clone(), ExcursionSpec::below(0.3), mu).unwrap();
        // rho is symmetric in the two sets, so the direction does not matter
        assert!((below.edm() - s.edm()).abs() < 1e-14);
    }
}
