//! End-to-end experiments. Every run is a pure function of its configuration:
//! all randomness flows from seeds derived from `cfg.seed`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use exset::analysis::{contour_length, ks_two_sample, volume_distribution, KsResult};
use exset::bvn::norm_cdf;
use exset::criterion::{edm, CriterionState, IntegrationMeasure};
use exset::designs::{grid, maximin_lhs, sobol, Design};
use exset::gp::{fit_mle, kriging_weights, posterior, KrigingMode, MleFit, Observations, PosteriorGp};
use exset::optpoints::optimize_points;
use exset::randomsets::{dav, CoverageField};
use exset::simulate::{excursions, FullSimulator, QuasiSimulator};
use exset::testfunctions::Benchmark;
use exset::{Error, Result};

use crate::config::{ExperimentConfig, Method};
use crate::output::{line_plot, Series, Table};

/// Lengthscale box for maximum likelihood, in unit-cube units.
pub const MLE_BOUNDS: (f64, f64) = (0.01, 2.0);

/// Stream identifiers for seed derivation.
mod tag {
    pub const OBS: u64 = 1;
    pub const MLE: u64 = 2;
    pub const OPT: u64 = 3;
    pub const LHS: u64 = 4;
    pub const FULL: u64 = 5;
    pub const QUASI: u64 = 6;
}

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

fn method_id(m: Method) -> u64 {
    match m {
        Method::AlgA => 1,
        Method::AlgB => 2,
        Method::MaximinLhs => 3,
        Method::Sobol => 4,
    }
}

pub struct Model {
    pub bench: Benchmark,
    pub fit: MleFit,
    pub gp: Arc<PosteriorGp>,
}

/// Maximin-LHS observations of the benchmark and the ML-fitted posterior.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Model> {
    let bench = cfg.bench();
    let x = maximin_lhs(bench.dim, cfg.n_obs, derive_seed(cfg.seed, &[tag::OBS]), cfg.lhs_restarts)?;
    let obs = Observations::from_fn(x, |p| bench.eval(p))?;
    let fit = fit_mle(&obs, cfg.kernel, MLE_BOUNDS, cfg.mle_restarts, derive_seed(cfg.seed, &[tag::MLE]))?;
    let gp = Arc::new(posterior(obs, fit.kernel.clone(), fit.mean)?);
    Ok(Model { bench, fit, gp })
}

pub fn integration_measure(cfg: &ExperimentConfig) -> Result<IntegrationMeasure> {
    IntegrationMeasure::uniform(sobol(cfg.bench().dim, cfg.integration_nodes, 1)?)
}

/// Simulation points of every size in `cfg.m_list` for one method. Greedy
/// designs are nested, so a single run up to the largest size serves all.
pub fn simulation_points(
    cfg: &ExperimentConfig,
    model: &Model,
    mu: &IntegrationMeasure,
    method: Method,
) -> Result<Vec<Design>> {
    let d = model.bench.dim;
    let m_max = *cfg.m_list.last().expect("validated nonempty");
    let nested = match method {
        Method::AlgA | Method::AlgB => {
            let alg = method.algorithm().expect("optimizing method");
            let mut state = CriterionState::new(model.gp.clone(), model.bench.threshold, mu.clone())?;
            let opt = cfg.optimizer.to_config(m_max, alg, derive_seed(cfg.seed, &[tag::OPT, method_id(method)]));
            Some(optimize_points(&mut state, &opt)?.design)
        }
        Method::Sobol => Some(sobol(d, m_max, 1)?),
        Method::MaximinLhs => None,
    };
    cfg.m_list
        .iter()
        .map(|&m| match &nested {
            Some(all) => Ok(all.prefix(m)),
            None if m < 2 => sobol(d, m, 1),
            None => maximin_lhs(d, m, derive_seed(cfg.seed, &[tag::LHS, m as u64]), cfg.lhs_restarts),
        })
        .collect()
}

fn all_points(cfg: &ExperimentConfig, model: &Model, mu: &IntegrationMeasure) -> Result<Vec<(Method, Vec<Design>)>> {
    cfg.methods.iter().map(|&meth| Ok((meth, simulation_points(cfg, model, mu, meth)?))).collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdmRow {
    pub method: Method,
    pub m: usize,
    pub edm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdmCompare {
    pub rows: Vec<EdmRow>,
}

impl EdmCompare {
    pub fn edm(&self, method: Method, m: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.m == m).map(|r| r.edm)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["method", "m", "edm"]);
        for r in &self.rows {
            t.push(vec![r.method.name().into(), r.m.to_string(), fmt(r.edm)]);
        }
        t
    }

    pub fn svg(&self) -> String {
        let series = group(&self.rows, |r| r.method, |r| (r.m as f64, r.edm));
        line_plot("Expected distance in measure", "m", "edm", &series)
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<()> {
        self.table().write(&dir.join("edm_compare.csv"), hash)?;
        std::fs::write(dir.join("edm_compare.svg"), self.svg())?;
        Ok(())
    }
}

fn group<R>(rows: &[R], key: impl Fn(&R) -> Method, point: impl Fn(&R) -> (f64, f64)) -> Vec<Series> {
    let mut by: BTreeMap<&'static str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by.entry(key(r).name()).or_default().push(point(r));
    }
    by.into_iter().map(|(name, points)| Series { name: name.into(), points }).collect()
}

/// Expected distance in measure of each method's simulation points.
///
/// The optimizers integrate over Sobol' nodes; the reported values use an
/// independent grid so that the optimized designs are not scored on the
/// very nodes they were fitted to.
pub fn run_edm_compare(cfg: &ExperimentConfig) -> Result<EdmCompare> {
    grid_design(cfg)?;
    let model = build_model(cfg)?;
    let mu = integration_measure(cfg)?;
    let eval = IntegrationMeasure::uniform(grid(2, cfg.evaluation_grid_q)?)?;
    let mut rows = Vec::new();
    for (method, designs) in all_points(cfg, &model, &mu)? {
        for (m, em) in cfg.m_list.iter().zip(&designs) {
            let v = edm(model.gp.clone(), model.bench.threshold, eval.clone(), em)?;
            rows.push(EdmRow { method, m: *m, edm: v });
        }
    }
    Ok(EdmCompare { rows })
}

/// Per-repetition values for each (method, m) next to the full-design benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRow {
    pub method: Method,
    pub m: usize,
    pub rep: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtvResult {
    pub full: Vec<f64>,
    pub rows: Vec<RepRow>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl DtvResult {
    pub fn values(&self, method: Method, m: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method && r.m == m).map(|r| r.value).collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["method", "m", "rep", "dtv"]);
        for (rep, v) in self.full.iter().enumerate() {
            t.push(vec!["full".into(), "0".into(), rep.to_string(), fmt(*v)]);
        }
        for r in &self.rows {
            t.push(vec![r.method.name().into(), r.m.to_string(), r.rep.to_string(), fmt(r.value)]);
        }
        t
    }

    pub fn svg(&self) -> String {
        let mut keys: Vec<(Method, usize)> = self.rows.iter().map(|r| (r.method, r.m)).collect();
        keys.dedup();
        let meds: Vec<(Method, f64, f64)> =
            keys.iter().map(|&(meth, m)| (meth, m as f64, median(&self.values(meth, m)))).collect();
        let mut series = group(&meds, |r| r.0, |r| (r.1, r.2));
        let xs: Vec<f64> = meds.iter().map(|r| r.1).collect();
        let (lo, hi) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(0.0, f64::max));
        let fm = median(&self.full);
        series.push(Series { name: "full".into(), points: vec![(lo, fm), (hi, fm)] });
        line_plot("Median distance transform variability", "m", "DTV", &series)
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<()> {
        self.table().write(&dir.join("dtv.csv"), hash)?;
        std::fs::write(dir.join("dtv.svg"), self.svg())?;
        Ok(())
    }
}

fn reps<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

fn quasi_simulators(
    model: &Model,
    points: &[(Method, Vec<Design>)],
    m_list: &[usize],
    g: &Design,
) -> Result<Vec<(Method, usize, QuasiSimulator)>> {
    let mut out = Vec::new();
    for (method, designs) in points {
        for (m, em) in m_list.iter().zip(designs) {
            let pred = kriging_weights(&model.gp, em, KrigingMode::SimpleKriging)?;
            out.push((*method, *m, QuasiSimulator::new(&pred, g)?));
        }
    }
    Ok(out)
}

fn quasi_seed(cfg: &ExperimentConfig, method: Method, m: usize, rep: usize) -> u64 {
    derive_seed(cfg.seed, &[tag::QUASI, method_id(method), m as u64, rep as u64])
}

fn full_seed(cfg: &ExperimentConfig, rep: usize) -> u64 {
    derive_seed(cfg.seed, &[tag::FULL, rep as u64])
}

fn grid_design(cfg: &ExperimentConfig) -> Result<Design> {
    if cfg.bench().dim != 2 {
        return Err(Error::InvalidArgument("this experiment needs a 2-D benchmark".into()));
    }
    grid(2, cfg.grid_q)
}

/// Distance transform variability of full-grid and quasi-realization ensembles.
pub fn run_dtv(cfg: &ExperimentConfig) -> Result<DtvResult> {
    let g = grid_design(cfg)?;
    let model = build_model(cfg)?;
    let mu = integration_measure(cfg)?;
    let exc = model.bench.threshold;
    let full_sim = FullSimulator::new(&model.gp, &g)?;
    let full = reps(cfg.repetitions, |rep| {
        dav(&excursions(&full_sim.simulate(cfg.realizations, full_seed(cfg, rep))?, exc))
    })?;
    drop(full_sim);
    let points = all_points(cfg, &model, &mu)?;
    let mut rows = Vec::new();
    for (method, m, sim) in quasi_simulators(&model, &points, &cfg.m_list, &g)? {
        let vals = reps(cfg.repetitions, |rep| {
            dav(&excursions(&sim.simulate(cfg.realizations, quasi_seed(cfg, method, m, rep))?, exc))
        })?;
        rows.extend(vals.into_iter().enumerate().map(|(rep, value)| RepRow { method, m, rep, value }));
    }
    Ok(DtvResult { full, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub method: Method,
    pub m: usize,
    pub rep: usize,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourResult {
    pub rows: Vec<KsRow>,
}

/// Fraction of repetitions where the KS test does not reject.
pub fn non_rejection(rows: &[KsRow], method: Method, m: usize) -> f64 {
    let sel: Vec<&KsRow> = rows.iter().filter(|r| r.method == method && r.m == m).collect();
    sel.iter().filter(|r| !r.ks.reject).count() as f64 / sel.len().max(1) as f64
}

fn ks_table(rows: &[KsRow]) -> Table {
    let mut t = Table::new(&["method", "m", "rep", "ks_statistic", "p_value", "reject"]);
    for r in rows {
        t.push(vec![
            r.method.name().into(),
            r.m.to_string(),
            r.rep.to_string(),
            fmt(r.ks.statistic),
            fmt(r.ks.p_value),
            r.ks.reject.to_string(),
        ]);
    }
    t
}

fn rejection_table(rows: &[KsRow]) -> Table {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.m)).collect();
    keys.dedup();
    let mut t = Table::new(&["method", "m", "non_rejection"]);
    for (meth, m) in keys {
        t.push(vec![meth.name().into(), m.to_string(), fmt(non_rejection(rows, meth, m))]);
    }
    t
}

impl ContourResult {
    pub fn write(&self, dir: &Path, hash: &str) -> Result<()> {
        ks_table(&self.rows).write(&dir.join("contour_length_ks.csv"), hash)?;
        rejection_table(&self.rows).write(&dir.join("contour_length_summary.csv"), hash)?;
        Ok(())
    }
}

/// KS comparison of level-set length distributions, full grid versus
/// quasi-realizations, with both samples redrawn in every repetition.
pub fn run_contour_length(cfg: &ExperimentConfig) -> Result<ContourResult> {
    let g = grid_design(cfg)?;
    let model = build_model(cfg)?;
    let mu = integration_measure(cfg)?;
    let exc = model.bench.threshold;
    let full_sim = FullSimulator::new(&model.gp, &g)?;
    let full = reps(cfg.repetitions, |rep| {
        Ok(contour_length(&full_sim.simulate(cfg.realizations, full_seed(cfg, rep))?, exc)?.lengths)
    })?;
    drop(full_sim);
    let points = all_points(cfg, &model, &mu)?;
    let mut rows = Vec::new();
    for (method, m, sim) in quasi_simulators(&model, &points, &cfg.m_list, &g)? {
        let ks = reps(cfg.repetitions, |rep| {
            let l = contour_length(&sim.simulate(cfg.realizations, quasi_seed(cfg, method, m, rep))?, exc)?.lengths;
            ks_two_sample(&full[rep], &l)
        })?;
        rows.extend(ks.into_iter().enumerate().map(|(rep, ks)| KsRow { method, m, rep, ks }));
    }
    Ok(ContourResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRow {
    pub method: Method,
    pub m: usize,
    pub rep: usize,
    /// Mean volume of the quasi-realizations before recentring.
    pub raw_mean: f64,
    /// Mean volume of the full-design realizations of the same repetition.
    pub full_mean: f64,
    pub clipped: usize,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeResult {
    /// Integral of the coverage function over the simulation design.
    pub coverage_mean: f64,
    pub rows: Vec<VolumeRow>,
}

impl VolumeResult {
    pub fn ks_rows(&self) -> Vec<KsRow> {
        self.rows.iter().map(|r| KsRow { method: r.method, m: r.m, rep: r.rep, ks: r.ks }).collect()
    }

    /// Mean absolute error of the mean volume against the full design,
    /// without and with recentring.
    pub fn bias(&self, method: Method, m: usize) -> (f64, f64) {
        let sel: Vec<&VolumeRow> = self.rows.iter().filter(|r| r.method == method && r.m == m).collect();
        let n = sel.len().max(1) as f64;
        let raw = sel.iter().map(|r| (r.raw_mean - r.full_mean).abs()).sum::<f64>() / n;
        let cor = sel.iter().map(|r| (self.coverage_mean - r.full_mean).abs()).sum::<f64>() / n;
        (raw, cor)
    }

    /// Smallest m whose non-rejection rate reaches `level`.
    pub fn first_accepted(&self, method: Method, level: f64) -> Option<usize> {
        let rows = self.ks_rows();
        let mut ms: Vec<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.m).collect();
        ms.dedup();
        ms.into_iter().find(|&m| non_rejection(&rows, method, m) >= level)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "method",
            "m",
            "rep",
            "raw_mean",
            "corrected_mean",
            "full_mean",
            "clipped",
            "ks_statistic",
            "p_value",
            "reject",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.method.name().into(),
                r.m.to_string(),
                r.rep.to_string(),
                fmt(r.raw_mean),
                fmt(self.coverage_mean),
                fmt(r.full_mean),
                r.clipped.to_string(),
                fmt(r.ks.statistic),
                fmt(r.ks.p_value),
                r.ks.reject.to_string(),
            ]);
        }
        t
    }

    pub fn bias_table(&self) -> Table {
        let mut keys: Vec<(Method, usize)> = self.rows.iter().map(|r| (r.method, r.m)).collect();
        keys.dedup();
        let mut t = Table::new(&["method", "m", "error_uncorrected", "error_corrected"]);
        for (meth, m) in keys {
            let (raw, cor) = self.bias(meth, m);
            t.push(vec![meth.name().into(), m.to_string(), fmt(raw), fmt(cor)]);
        }
        t
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<()> {
        self.table().write(&dir.join("volume.csv"), hash)?;
        self.bias_table().write(&dir.join("volume_bias.csv"), hash)?;
        rejection_table(&self.ks_rows()).write(&dir.join("volume_summary.csv"), hash)?;
        let rows = self.ks_rows();
        let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.m)).collect();
        keys.dedup();
        let stats: Vec<(Method, f64, f64)> = keys
            .iter()
            .map(|&(meth, m)| {
                let s: Vec<f64> = rows.iter().filter(|r| r.method == meth && r.m == m).map(|r| r.ks.statistic).collect();
                (meth, m as f64, median(&s))
            })
            .collect();
        let series = group(&stats, |r| r.0, |r| (r.1, r.2));
        std::fs::write(dir.join("volume_ks.svg"), line_plot("Median KS statistic, V_m vs V_full", "m", "KS", &series))?;
        Ok(())
    }
}

/// Coverage function of the posterior on `g`, in closed form.
pub fn posterior_coverage(gp: &PosteriorGp, exc: exset::criterion::ExcursionSpec, g: &Design) -> Result<CoverageField> {
    let p = g
        .rows()
        .map(|x| {
            let parts = gp.parts(x);
            let m = gp.mean_from_parts(&parts);
            let v = gp.cov_from_parts(x, &parts, x, &parts);
            if v <= gp.resolution() {
                if exc.contains(m) { 1.0 } else { 0.0 }
            } else {
                norm_cdf(exc.sign() * (m - exc.threshold) / v.sqrt())
            }
        })
        .collect();
    CoverageField::new(g.clone(), p)
}

/// Excursion-volume distributions from quasi-realizations, recentred on the
/// coverage integral, tested against full-design simulation.
pub fn run_volume(cfg: &ExperimentConfig) -> Result<VolumeResult> {
    let model = build_model(cfg)?;
    let g = sobol(model.bench.dim, cfg.simulation_nodes, 1)?;
    let mu = integration_measure(cfg)?;
    let exc = model.bench.threshold;
    let cov = posterior_coverage(&model.gp, exc, &g)?;
    let full_sim = FullSimulator::new(&model.gp, &g)?;
    let full = reps(cfg.repetitions, |rep| {
        let ens = excursions(&full_sim.simulate(cfg.realizations, full_seed(cfg, rep))?, exc);
        Ok(volume_distribution(&ens, false, None)?.volumes)
    })?;
    drop(full_sim);
    let points = all_points(cfg, &model, &mu)?;
    let mut rows = Vec::new();
    for (method, m, sim) in quasi_simulators(&model, &points, &cfg.m_list, &g)? {
        let per = reps(cfg.repetitions, |rep| {
            let ens = excursions(&sim.simulate(cfg.realizations, quasi_seed(cfg, method, m, rep))?, exc);
            let raw = volume_distribution(&ens, false, None)?;
            let cor = volume_distribution(&ens, true, Some(&cov))?;
            let ks = ks_two_sample(&cor.volumes, &full[rep])?;
            let full_mean = full[rep].iter().sum::<f64>() / full[rep].len() as f64;
            Ok(VolumeRow { method, m, rep, raw_mean: raw.center, full_mean, clipped: cor.clipped, ks })
        })?;
        rows.extend(per);
    }
    Ok(VolumeResult { coverage_mean: cov.integral(), rows })
}
