//! Experiment configuration: TOML (sections of `key = value`) or JSON.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use exset::optpoints::{Algorithm, OptimizerConfig};
use exset::testfunctions::{Benchmark, BenchmarkName};
use exset::KernelFamily;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: {}", self.msg),
            None => write!(f, "config error: {}", self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EdmCompare,
    Dtv,
    ContourLength,
    Volume,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EdmCompare => "edm-compare",
            ExperimentKind::Dtv => "dtv",
            ExperimentKind::ContourLength => "contour-length",
            ExperimentKind::Volume => "volume",
        }
    }
}

/// How simulation points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AlgA,
    AlgB,
    MaximinLhs,
    Sobol,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AlgA => "alg-a",
            Method::AlgB => "alg-b",
            Method::MaximinLhs => "maximin-lhs",
            Method::Sobol => "sobol",
        }
    }

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Method::AlgA => Some(Algorithm::A),
            Method::AlgB => Some(Algorithm::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "d_population")]
    pub population: usize,
    #[serde(default = "d_generations")]
    pub generations: usize,
    #[serde(default = "d_polish")]
    pub polish_evals: usize,
    #[serde(default = "d_multistarts")]
    pub multistarts: usize,
    #[serde(default = "d_start_evals")]
    pub start_evals: usize,
    #[serde(default = "d_start_design")]
    pub start_design_size: usize,
}

fn d_population() -> usize {
    40
}
fn d_generations() -> usize {
    15
}
fn d_polish() -> usize {
    50
}
fn d_multistarts() -> usize {
    20
}
fn d_start_evals() -> usize {
    40
}
fn d_start_design() -> usize {
    4096
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            population: d_population(),
            generations: d_generations(),
            polish_evals: d_polish(),
            multistarts: d_multistarts(),
            start_evals: d_start_evals(),
            start_design_size: d_start_design(),
        }
    }
}

impl OptimizerSection {
    pub fn to_config(&self, m: usize, algorithm: Algorithm, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            population: self.population,
            generations: self.generations,
            polish_evals: self.polish_evals,
            multistarts: self.multistarts,
            start_evals: self.start_evals,
            start_design_size: self.start_design_size,
            ..OptimizerConfig::new(m, algorithm, seed)
        }
    }
}

/// Raw file contents; every field is optional and filled from the benchmark
/// defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    benchmark: String,
    experiment: Option<ExperimentKind>,
    seed: Option<u64>,
    n_obs: Option<usize>,
    kernel: Option<String>,
    mle_restarts: Option<usize>,
    lhs_restarts: Option<usize>,
    m_list: Option<Vec<usize>>,
    methods: Option<Vec<Method>>,
    realizations: Option<usize>,
    repetitions: Option<usize>,
    grid_q: Option<usize>,
    integration_nodes: Option<usize>,
    simulation_nodes: Option<usize>,
    evaluation_grid_q: Option<usize>,
    output: Option<String>,
    optimizer: Option<OptimizerSection>,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(serialize_with = "ser_benchmark")]
    pub benchmark: BenchmarkName,
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub n_obs: usize,
    #[serde(serialize_with = "ser_kernel")]
    pub kernel: KernelFamily,
    pub mle_restarts: usize,
    pub lhs_restarts: usize,
    pub m_list: Vec<usize>,
    pub methods: Vec<Method>,
    /// Realizations per ensemble.
    pub realizations: usize,
    pub repetitions: usize,
    /// Points per axis of the 2-D simulation grid.
    pub grid_q: usize,
    /// Sobol' nodes of the integration design for the criterion.
    pub integration_nodes: usize,
    /// Sobol' nodes of the simulation design in the volume experiment.
    pub simulation_nodes: usize,
    /// Points per axis of the independent grid on which edm is reported.
    pub evaluation_grid_q: usize,
    pub output: String,
    pub optimizer: OptimizerSection,
}

impl ExperimentConfig {
    /// Desk-scale defaults for a benchmark.
    pub fn defaults(name: BenchmarkName) -> Self {
        let bench = Benchmark::by_name(name);
        match name {
            BenchmarkName::BraninNeg => Self {
                benchmark: name,
                experiment: None,
                seed: 1,
                n_obs: bench.n_obs,
                kernel: KernelFamily::Matern32,
                mle_restarts: 5,
                lhs_restarts: 10,
                m_list: vec![10, 30, 50, 100],
                methods: vec![Method::AlgA, Method::AlgB, Method::MaximinLhs, Method::Sobol],
                realizations: 2000,
                repetitions: 10,
                grid_q: 50,
                integration_nodes: 2048,
                simulation_nodes: 2500,
                evaluation_grid_q: 100,
                output: "out".into(),
                optimizer: OptimizerSection::default(),
            },
            BenchmarkName::Hartmann6Log => Self {
                benchmark: name,
                experiment: None,
                seed: 1,
                n_obs: bench.n_obs,
                kernel: KernelFamily::Matern52,
                mle_restarts: 5,
                lhs_restarts: 10,
                m_list: vec![50, 75, 100, 125, 150],
                methods: vec![Method::AlgB, Method::Sobol],
                realizations: 2000,
                repetitions: 10,
                grid_q: 10,
                integration_nodes: 4096,
                simulation_nodes: 4096,
                evaluation_grid_q: 100,
                output: "out".into(),
                optimizer: OptimizerSection::default(),
            },
        }
    }

    pub fn bench(&self) -> Benchmark {
        Benchmark { n_obs: self.n_obs, ..Benchmark::by_name(self.benchmark) }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let json = text.trim_start().starts_with('{');
        let raw: RawConfig = if json {
            serde_json::from_str(text).map_err(|e| ConfigError { line: Some(e.line()), msg: e.to_string() })?
        } else {
            toml::from_str(text).map_err(|e| ConfigError {
                line: e.span().map(|s| line_of_offset(text, s.start)),
                msg: e.message().to_string(),
            })?
        };
        Self::resolve(raw, text, json)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: None, msg: format!("cannot read {}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    fn resolve(raw: RawConfig, text: &str, json: bool) -> Result<Self, ConfigError> {
        let err = |key: &str, msg: String| ConfigError { line: line_of_key(text, key, json), msg };
        let name = BenchmarkName::parse(&raw.benchmark).map_err(|e| err("benchmark", e.to_string()))?;
        let d = Self::defaults(name);
        let kernel = match &raw.kernel {
            Some(k) => KernelFamily::parse(k).map_err(|e| err("kernel", e.to_string()))?,
            None => d.kernel,
        };
        let cfg = Self {
            benchmark: name,
            experiment: raw.experiment,
            seed: raw.seed.unwrap_or(d.seed),
            n_obs: raw.n_obs.unwrap_or(d.n_obs),
            kernel,
            mle_restarts: raw.mle_restarts.unwrap_or(d.mle_restarts),
            lhs_restarts: raw.lhs_restarts.unwrap_or(d.lhs_restarts),
            m_list: raw.m_list.unwrap_or(d.m_list),
            methods: raw.methods.unwrap_or(d.methods),
            realizations: raw.realizations.unwrap_or(d.realizations),
            repetitions: raw.repetitions.unwrap_or(d.repetitions),
            grid_q: raw.grid_q.unwrap_or(d.grid_q),
            integration_nodes: raw.integration_nodes.unwrap_or(d.integration_nodes),
            simulation_nodes: raw.simulation_nodes.unwrap_or(d.simulation_nodes),
            evaluation_grid_q: raw.evaluation_grid_q.unwrap_or(d.evaluation_grid_q),
            output: raw.output.unwrap_or(d.output),
            optimizer: raw.optimizer.unwrap_or_default(),
        };
        cfg.validate().map_err(|(key, msg)| err(key, msg))?;
        Ok(cfg)
    }

    /// Checks counts and orderings; on failure names the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let counts = [
            ("n_obs", self.n_obs),
            ("realizations", self.realizations),
            ("repetitions", self.repetitions),
            ("integration_nodes", self.integration_nodes),
            ("simulation_nodes", self.simulation_nodes),
            ("population", self.optimizer.population),
            ("generations", self.optimizer.generations),
            ("multistarts", self.optimizer.multistarts),
            ("start_design_size", self.optimizer.start_design_size),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err((key, format!("{key} must be positive")));
            }
        }
        if self.grid_q < 2 {
            return Err(("grid_q", format!("grid_q must be at least 2, got {}", self.grid_q)));
        }
        if self.evaluation_grid_q < 2 {
            return Err(("evaluation_grid_q", format!("evaluation_grid_q must be at least 2, got {}", self.evaluation_grid_q)));
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(("m_list", "m_list must hold positive counts".into()));
        }
        if self.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(("m_list", "m_list must be strictly increasing".into()));
        }
        if self.methods.is_empty() {
            return Err(("methods", "at least one method is required".into()));
        }
        let dim = Benchmark::by_name(self.benchmark).dim;
        if self.n_obs < dim + 2 {
            return Err(("n_obs", format!("n_obs must be at least {} for maximum likelihood", dim + 2)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn ser_benchmark<S: serde::Serializer>(b: &BenchmarkName, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(b.as_str())
}

fn ser_kernel<S: serde::Serializer>(k: &KernelFamily, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(k.name())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line where `key` is assigned, if it appears in the text.
fn line_of_key(text: &str, key: &str, json: bool) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        if json {
            l.starts_with(&format!("\"{key}\""))
        } else {
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        }
    })
    .map(|i| i + 1)
}
