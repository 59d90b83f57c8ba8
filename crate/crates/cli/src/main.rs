use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exset::criterion::{CriterionState, ExcursionSpec};
use exset::designs::{grid, sobol, Design};
use exset::gp::{kriging_weights, KrigingMode};
use exset::optpoints::{optimize_points, Algorithm};
use exset::randomsets::{coverage, distance_average, dav, vorobev, vorobev_deviation, write_heat_csv};
use exset::simulate::{excursions, write_summary_csv, FieldEnsemble, FullSimulator, QuasiSimulator};
use exset_cli::config::{ConfigError, ExperimentConfig, ExperimentKind};
use exset_cli::experiments::{
    build_model, derive_seed, integration_measure, run_contour_length, run_dtv, run_edm_compare, run_volume,
};
use exset_cli::output::{heat_map, Table};

#[derive(Parser)]
#[command(name = "exset", version, about = "Excursion-set simulation experiments")]
struct Cli {
    /// Experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the benchmark model by maximum likelihood.
    Fit,
    /// Choose simulation points with Algorithm A or B.
    OptimizePoints {
        /// Number of points (defaults to the largest entry of m_list).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value = "B")]
        algorithm: String,
    },
    /// Simulate excursion sets on the full design, or from a point file.
    Simulate {
        /// CSV of simulation points; quasi-realizations are drawn when given.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Expected distance in measure of optimized and space-filling points.
    EdmCompare,
    /// Distance transform variability, full versus quasi-realizations.
    Dtv,
    /// KS comparison of level-set length distributions.
    ContourLength,
    /// KS comparison of excursion volume distributions.
    Volume,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<exset::Error> for Failure {
    fn from(e: exset::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("error: {m}"),
                Failure::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Config(_) => 1,
        Failure::Numerical(_) => 2,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output));
    fs::create_dir_all(&out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Config(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &cfg, &out))
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<(), Failure> {
    match cfg.experiment {
        Some(k) if k != kind => Err(Failure::Config(format!(
            "config describes experiment {} but {} was requested",
            k.name(),
            kind.name()
        ))),
        _ => Ok(()),
    }
}

fn dispatch(cmd: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let hash = cfg.hash();
    match cmd {
        Command::Fit => fit(cfg, out, &hash),
        Command::OptimizePoints { m, algorithm } => {
            let alg = Algorithm::parse(algorithm)?;
            optimize(cfg, out, &hash, m.unwrap_or(*cfg.m_list.last().expect("validated")), alg)
        }
        Command::Simulate { points } => simulate(cfg, out, &hash, points.as_deref()),
        Command::EdmCompare => {
            expect_kind(cfg, ExperimentKind::EdmCompare)?;
            Ok(run_edm_compare(cfg)?.write(out, &hash)?)
        }
        Command::Dtv => {
            expect_kind(cfg, ExperimentKind::Dtv)?;
            Ok(run_dtv(cfg)?.write(out, &hash)?)
        }
        Command::ContourLength => {
            expect_kind(cfg, ExperimentKind::ContourLength)?;
            Ok(run_contour_length(cfg)?.write(out, &hash)?)
        }
        Command::Volume => {
            expect_kind(cfg, ExperimentKind::Volume)?;
            Ok(run_volume(cfg)?.write(out, &hash)?)
        }
    }
}

fn fit(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<(), Failure> {
    let model = build_model(cfg)?;
    fs::write(out.join("model.txt"), model.gp.to_text())?;
    let mut t = Table::new(&["family", "variance", "lengthscales", "beta", "loglik", "improved"]);
    let k = &model.fit.kernel;
    let ls: Vec<String> = k.lengthscales().iter().map(|v| v.to_string()).collect();
    t.push(vec![
        k.family().name().into(),
        k.variance().to_string(),
        ls.join(" "),
        model.gp.beta_hat().to_string(),
        model.fit.loglik.to_string(),
        model.fit.improved.to_string(),
    ]);
    t.write(&out.join("fit.csv"), hash)?;
    if !model.fit.improved {
        eprintln!("warning: no likelihood start improved on its initial point");
    }
    Ok(())
}

fn optimize(cfg: &ExperimentConfig, out: &Path, hash: &str, m: usize, alg: Algorithm) -> Result<(), Failure> {
    if m == 0 {
        return Err(Failure::Config("m must be positive".into()));
    }
    let model = build_model(cfg)?;
    let mu = integration_measure(cfg)?;
    let mut state = CriterionState::new(model.gp.clone(), model.bench.threshold, mu)?;
    let id = if alg == Algorithm::A { 1 } else { 2 };
    let opt = cfg.optimizer.to_config(m, alg, derive_seed(cfg.seed, &[3, id]));
    let res = optimize_points(&mut state, &opt)?;
    res.design.write_csv(BufWriter::new(File::create(out.join("points.csv"))?))?;
    let mut t = Table::new(&["step", "candidate_evals", "criterion_value", "bvn_evals"]);
    for s in &res.trace {
        t.push(vec![
            s.step.to_string(),
            s.candidate_evals.to_string(),
            s.criterion_value.to_string(),
            s.bvn_evals.to_string(),
        ]);
    }
    t.write(&out.join("trace.csv"), hash)?;
    Ok(())
}

fn simulation_design(cfg: &ExperimentConfig) -> exset::Result<Design> {
    let d = cfg.bench().dim;
    if d == 2 {
        grid(2, cfg.grid_q)
    } else {
        sobol(d, cfg.simulation_nodes, 1)
    }
}

fn simulate(cfg: &ExperimentConfig, out: &Path, hash: &str, points: Option<&Path>) -> Result<(), Failure> {
    let model = build_model(cfg)?;
    let g = simulation_design(cfg)?;
    let seed = derive_seed(cfg.seed, &[7]);
    let ens: FieldEnsemble = match points {
        Some(p) => {
            let file = File::open(p).map_err(|e| Failure::Config(format!("cannot open {}: {e}", p.display())))?;
            let em = Design::read_csv(std::io::BufReader::new(file))?;
            let pred = kriging_weights(&model.gp, &em, KrigingMode::SimpleKriging)?;
            QuasiSimulator::new(&pred, &g)?.simulate(cfg.realizations, seed)?
        }
        None => FullSimulator::new(&model.gp, &g)?.simulate(cfg.realizations, seed)?,
    };
    ens.write_binary(BufWriter::new(File::create(out.join("ensemble.bin"))?))?;
    write_summary_csv(&ens, BufWriter::new(File::create(out.join("summary.csv"))?))?;
    let exc: ExcursionSpec = model.bench.threshold;
    let sets = excursions(&ens, exc);
    let cov = coverage(&sets);
    write_heat_csv(&g, &cov.p, BufWriter::new(File::create(out.join("coverage.csv"))?))?;
    let (alpha, q) = vorobev(&cov, None);
    let q_values: Vec<f64> = q.iter().map(|&b| b as u8 as f64).collect();
    write_heat_csv(&g, &q_values, BufWriter::new(File::create(out.join("vorobev.csv"))?))?;
    let mut stats = Table::new(&["statistic", "value"]);
    stats.push(vec!["vorobev_alpha".into(), alpha.to_string()]);
    stats.push(vec!["vorobev_deviation".into(), vorobev_deviation(&sets, &q)?.to_string()]);
    stats.push(vec!["expected_volume".into(), cov.integral().to_string()]);
    if let Some(qg) = g.grid_q() {
        fs::write(out.join("coverage.svg"), heat_map("Coverage function", qg, &cov.p))?;
        match distance_average(&sets) {
            Ok(da) => {
                let v: Vec<f64> = da.mask.iter().map(|&b| b as u8 as f64).collect();
                write_heat_csv(&g, &v, BufWriter::new(File::create(out.join("distance_average.csv"))?))?;
                stats.push(vec!["distance_average_level".into(), da.u_bar.to_string()]);
                stats.push(vec!["dtv".into(), dav(&sets)?.to_string()]);
            }
            Err(e) => eprintln!("warning: distance average skipped: {e}"),
        }
    }
    stats.write(&out.join("statistics.csv"), hash)?;
    Ok(())
}
