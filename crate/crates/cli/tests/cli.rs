use std::fs;
use std::path::Path;
use std::process::Command;

use exset::testfunctions::BenchmarkName;
use exset_cli::{ExperimentConfig, ExperimentKind, Method};

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exset"))
}

#[test]
fn minimal_config_takes_benchmark_defaults() {
    let c = ExperimentConfig::parse("benchmark = \"branin\"\n").unwrap();
    assert_eq!(c, ExperimentConfig::defaults(BenchmarkName::BraninNeg));
    let h = ExperimentConfig::parse("benchmark = \"hartmann6\"\nexperiment = \"volume\"\n").unwrap();
    assert_eq!(h.n_obs, 60);
    assert_eq!(h.experiment, Some(ExperimentKind::Volume));
    assert_eq!(h.methods, vec![Method::AlgB, Method::Sobol]);
}

#[test]
fn toml_and_json_agree() {
    let toml = "benchmark = \"branin\"\nseed = 9\nm_list = [5, 7]\nmethods = [\"alg-b\", \"maximin-lhs\"]\n\n[optimizer]\nmultistarts = 3\n";
    let json = r#"{"benchmark": "branin", "seed": 9, "m_list": [5, 7], "methods": ["alg-b", "maximin-lhs"], "optimizer": {"multistarts": 3}}"#;
    let a = ExperimentConfig::parse(toml).unwrap();
    let b = ExperimentConfig::parse(json).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.optimizer.multistarts, 3);
    assert_eq!(a.optimizer.population, 40);
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), a.clone().with_seed(10).hash());
}

#[test]
fn errors_point_at_the_offending_line() {
    let unknown = ExperimentConfig::parse("benchmark = \"branin\"\nseed = 1\nbogus = 2\n").unwrap_err();
    assert_eq!(unknown.line, Some(3), "{unknown}");
    let invalid = ExperimentConfig::parse("benchmark = \"branin\"\ngrid_q = 1\n").unwrap_err();
    assert_eq!(invalid.line, Some(2), "{invalid}");
    let order = ExperimentConfig::parse("benchmark = \"branin\"\n\nm_list = [10, 5]\n").unwrap_err();
    assert_eq!(order.line, Some(3));
    let bench = ExperimentConfig::parse("seed = 3\nbenchmark = \"rosenbrock\"\n").unwrap_err();
    assert_eq!(bench.line, Some(2));
    assert!(bench.to_string().contains("line 2"));
    let json = ExperimentConfig::parse("{\n\"benchmark\": \"branin\",\n\"grid_q\": 0\n}").unwrap_err();
    assert_eq!(json.line, Some(3));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = exe().arg("fit").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "benchmark = \"branin\"\nn_obs = 0\n").unwrap();
    let out = exe().arg("fit").arg("--config").arg(&bad).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let mismatch = dir.path().join("dtv.toml");
    fs::write(&mismatch, "benchmark = \"branin\"\nexperiment = \"dtv\"\n").unwrap();
    let out = exe().args(["volume", "--config"]).arg(&mismatch).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = exe().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

const SMALL: &str = r#"benchmark = "branin"
experiment = "dtv"
seed = 4
mle_restarts = 2
lhs_restarts = 2
m_list = [6, 12]
methods = ["alg-b", "sobol"]
realizations = 60
repetitions = 3
grid_q = 16
integration_nodes = 256

[optimizer]
multistarts = 2
start_evals = 20
start_design_size = 256
"#;

fn run(dir: &Path, args: &[&str]) {
    let out = exe().args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    for (out, threads) in [("a", "1"), ("b", "3")] {
        run(dir.path(), &["dtv", "--config", c, "--threads", threads, "--out", out]);
        run(dir.path(), &["simulate", "--config", c, "--threads", threads, "--out", out]);
        run(dir.path(), &["optimize-points", "--config", c, "--m", "5", "--threads", threads, "--out", out]);
    }
    let a = files(&dir.path().join("a"));
    let b = files(&dir.path().join("b"));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    for want in ["dtv.csv", "dtv.svg", "ensemble.bin", "coverage.csv", "statistics.csv", "points.csv", "trace.csv"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert_eq!(a, b);

    // the seed flag changes the result, and every table records the config hash
    run(dir.path(), &["dtv", "--config", c, "--seed", "5", "--out", "c"]);
    let dtv_a = fs::read_to_string(dir.path().join("a/dtv.csv")).unwrap();
    let dtv_c = fs::read_to_string(dir.path().join("c/dtv.csv")).unwrap();
    assert_ne!(dtv_a, dtv_c);
    assert!(dtv_a.starts_with("# exset "));
    assert!(dtv_a.lines().next().unwrap().contains("config-sha256="));
}

#[test]
fn simulate_accepts_point_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let c = cfg.to_str().unwrap();
    run(dir.path(), &["optimize-points", "--config", c, "--m", "8", "--algorithm", "B", "--out", "o"]);
    run(dir.path(), &["simulate", "--config", c, "--points", "o/points.csv", "--out", "q"]);
    run(dir.path(), &["fit", "--config", c, "--out", "f"]);
    let stats = fs::read_to_string(dir.path().join("q/statistics.csv")).unwrap();
    assert!(stats.contains("vorobev_alpha"));
    assert!(fs::read_to_string(dir.path().join("f/model.txt")).unwrap().len() > 10);
}
