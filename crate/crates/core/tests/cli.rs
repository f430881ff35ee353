use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_levy-cox");

const CONFIG: &str = r#"
kernel = "dykstra-laud"
family = "generalized-gamma"
alpha = 0.5
b = 1.0
eta = "lebesgue"
eta_lo = 0.0
eta_hi = 6.0
sampler = "wcr"
replicates = 20000
seed = 11
grid_t_max = 4.0
grid_points = 5
"#;

const DATA: &str = "time,event\n0.7,1\n1.1,1\n1.6,0\n2.2,1\n2.9,1\n3.5,0\n";

fn setup(config: &str, data: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    fs::write(dir.path().join("data.csv"), data).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

/// Rows of a stamped CSV: the stamp line, then the header, then numbers.
fn read_table(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let stamp = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (stamp, header, rows)
}

#[test]
fn fit_matches_the_oracle_and_is_reproducible() {
    let dir = setup(CONFIG, DATA);
    let p = dir.path();
    let fit = run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "a", "--workers", "3"]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let again = run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "b", "--workers", "1"]);
    assert!(again.status.success());
    assert_eq!(fs::read(p.join("a/hazard.csv")).unwrap(), fs::read(p.join("b/hazard.csv")).unwrap());

    let oracle = run(p, &["oracle", "--config", "run.toml", "--data", "data.csv", "--out", "o"]);
    assert!(oracle.status.success(), "{}", String::from_utf8_lossy(&oracle.stderr));
    let (stamp, header, est) = read_table(&p.join("a/hazard.csv"));
    assert_eq!(header, ["t", "posterior_mean_hazard", "mc_se"]);
    let (ostamp, _, exact) = read_table(&p.join("o/hazard.csv"));
    assert_eq!(stamp, ostamp);
    for (e, x) in est.iter().zip(&exact) {
        assert_eq!(e[0], x[0]);
        assert!((e[1] - x[1]).abs() <= 4.0 * e[2] + 1e-12, "{e:?} vs {x:?}");
    }

    let diag: serde_json::Value = serde_json::from_slice(&fs::read(p.join("a/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["seed"], 11);
    assert!(stamp.contains(diag["config_hash"].as_str().unwrap()));
    assert!(diag["ess"].as_f64().unwrap() > 1000.0);
    let post: serde_json::Value = serde_json::from_slice(&fs::read(p.join("o/partition_posterior.json")).unwrap()).unwrap();
    assert_eq!(post["partitions"].as_array().unwrap().len(), 15);
    assert_eq!(post["config_hash"], diag["config_hash"]);
}

#[test]
fn seed_flag_changes_the_stamp() {
    let dir = setup(CONFIG, DATA);
    let p = dir.path();
    assert!(run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "a", "--replicates", "500"]).status.success());
    assert!(run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "b", "--replicates", "500", "--seed", "12"]).status.success());
    let (a, _, _) = read_table(&p.join("a/hazard.csv"));
    let (b, _, _) = read_table(&p.join("b/hazard.csv"));
    assert!(a.starts_with("# config_hash=") && a.contains(",seed=11,version="));
    assert!(b.contains(",seed=12,"));
    assert_ne!(a.split(',').next(), b.split(',').next());
}

#[test]
fn no_events_gives_the_prior_term() {
    let dir = setup(CONFIG, "time,event\n1.0,0\n2.5,0\n");
    let p = dir.path();
    let out = run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "a"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, _, rows) = read_table(&p.join("a/hazard.csv"));
    // DL kernel, GG(α, 1), Lebesgue on [0, 6]: ∫_0^x (1 + g(y))^{α-1} dy
    // with g(y) = (1 - y)^+ + (2.5 - y)^+
    let cfg = levy_cox::quadrature::QuadConfig::default();
    for r in rows {
        let x = r[0];
        let g = |y: f64| (1.0 - y).max(0.0) + (2.5 - y).max(0.0);
        let expect = levy_cox::quadrature::integrate(|y| (1.0 + g(y)).powf(-0.5), 0.0, x, &[1.0, 2.5], &cfg).unwrap();
        assert!((r[1] - expect).abs() < 1e-8 * expect.max(1.0), "{r:?} vs {expect}");
        assert_eq!(r[2], 0.0);
    }
}

#[test]
fn oracle_with_one_event() {
    let dir = setup(CONFIG, "time,event\n1.0,1\n2.0,0\n");
    let p = dir.path();
    assert!(run(p, &["oracle", "--config", "run.toml", "--data", "data.csv", "--out", "o"]).status.success());
    let post: serde_json::Value = serde_json::from_slice(&fs::read(p.join("o/partition_posterior.json")).unwrap()).unwrap();
    let parts = post["partitions"].as_array().unwrap();
    assert_eq!(parts.len(), 1);
    assert!((parts[0]["probability"].as_f64().unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(parts[0]["partition"], serde_json::json!([[1]]));
}

#[test]
fn ewens_table() {
    let dir = setup(CONFIG, DATA);
    let p = dir.path();
    let out = run(p, &["oracle", "--config", "run.toml", "--esf-theta", "1", "--out", "e"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("e/partition_posterior.json")).unwrap()).unwrap();
    let rows = report["partitions"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    // θ = 1, n = 3: 2/6 for one block, 1/6 for the others
    for r in rows {
        let cells = r["partition"].as_array().unwrap().len();
        let expect = if cells == 1 { 1.0 / 3.0 } else { 1.0 / 6.0 };
        assert!((r["closed_form"].as_f64().unwrap() - expect).abs() < 1e-14);
        assert!((r["gamma_process"].as_f64().unwrap() - expect).abs() < 1e-9);
    }
}

#[test]
fn prior_predictive_of_the_stable_process() {
    let config = CONFIG
        .replace("b = 1.0", "b = 0.0")
        .replace("eta_hi = 6.0", "eta_hi = inf")
        .replace("grid_t_max = 4.0", "grid_t_max = 2.0");
    let dir = setup(&config, DATA);
    let p = dir.path();
    let out = run(p, &["prior-predictive", "--config", "run.toml", "--out", "pp"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, header, rows) = read_table(&p.join("pp/prior_predictive.csv"));
    assert_eq!(header, ["t", "hazard", "survival", "closed_form_hazard", "closed_form_survival"]);
    assert_eq!(rows[0], vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    let one = rows.iter().find(|r| r[0] == 1.0).unwrap();
    assert_eq!(one[3], 2.0);
    for r in &rows[1..] {
        assert!(((r[1] - r[3]) / r[3]).abs() < 1e-4);
        assert!((r[2] - r[4]).abs() < 1e-4);
    }
}

#[test]
fn posterior_measure_draws() {
    let config = format!("{CONFIG}crm_draws = 4\n").replace("alpha = 0.5", "alpha = -1.0");
    let dir = setup(&config, DATA);
    let p = dir.path();
    let out = run(p, &["fit", "--config", "run.toml", "--data", "data.csv", "--out", "a", "--replicates", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("a/crm_draws/truncation.json")).unwrap()).unwrap();
    assert_eq!(report["epsilon"], 0.0);
    assert_eq!(report["draws"].as_array().unwrap().len(), 4);
    let text = fs::read_to_string(p.join("a/crm_draws/draw_00003.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert_eq!(text.lines().nth(1), Some("s,y"));
    // every posterior draw carries at least one fixed atom per cell
    assert!(text.lines().count() >= 3);
}

#[test]
fn validate_reports_every_check() {
    let dir = setup(CONFIG, DATA);
    let p = dir.path();
    let out = run(p, &["validate", "--config", "run.toml", "--out", "v", "--replicates", "20000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 7);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn exit_codes() {
    let dir = setup(CONFIG, DATA);
    let p = dir.path();
    fs::write(p.join("bad.toml"), CONFIG.replace("alpha = 0.5", "alpha = 1.5")).unwrap();
    let bad = run(p, &["fit", "--config", "bad.toml", "--data", "data.csv", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("`family`"));

    let missing = run(p, &["fit", "--config", "run.toml", "--data", "absent.csv", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(4));

    fs::write(p.join("rows.csv"), "time,event\n1.0,2\n").unwrap();
    let rows = run(p, &["fit", "--config", "run.toml", "--data", "rows.csv", "--out", "x"]);
    assert_eq!(rows.status.code(), Some(2));

    let big: String = (1..=10).map(|i| format!("{}.0,1\n", i)).collect();
    fs::write(p.join("big.csv"), format!("time,event\n{big}")).unwrap();
    let cap = run(p, &["oracle", "--config", "run.toml", "--data", "big.csv", "--out", "x"]);
    assert_eq!(cap.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cap.stderr).contains("enumeration cap"));

    // stable process, unbounded latent axis and an event: the posterior
    // cell integrals diverge
    let divergent = CONFIG.replace("b = 1.0", "b = 0.0").replace("eta_hi = 6.0", "eta_hi = inf");
    fs::write(p.join("div.toml"), divergent).unwrap();
    let div = run(p, &["fit", "--config", "div.toml", "--data", "data.csv", "--out", "x"]);
    assert_eq!(div.status.code(), Some(3), "{}", String::from_utf8_lossy(&div.stderr));
}
