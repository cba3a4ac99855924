use std::path::Path;
use std::process::{Command, Output};

use queuerand::cohort::{generate_cohort, ScoreLaw};

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_queuerand"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn config_errors_exit_nonzero_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["pareto"], "[mechanism]\nbeta = 2.0\n");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mechanism.beta"));
    let out = run(dir.path(), &["estimate"], "[estimation]\nestimators = [\"ols\"]\n");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimation.estimators"));
}

#[test]
fn bias_requires_the_endogenous_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["bias"], "");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cohort.dgp"));
}

#[test]
fn relevance_failure_is_a_status_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["estimate"],
        "[estimation]\nestimators = [\"pliv\", \"dr_ate\"]\nrelevance_floor = 10.0\n",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("out/estimates.csv"));
    assert_eq!(rows[0][0], "pliv");
    assert_eq!(rows[0][7], "relevance_error");
    assert_eq!(rows[1][7], "ok");
}

#[test]
fn estimate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[execution]\nseed = 9\n";
    assert!(run(dir.path(), &["estimate"], cfg).status.success());
    let first = std::fs::read(dir.path().join("out/estimates.csv")).unwrap();
    assert!(run(dir.path(), &["estimate", "--threads", "2"], cfg).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("out/estimates.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("method,point,se,ci_low,ci_high,n,seed,status\n"));
}

#[test]
fn pareto_rows_match_budget_identity_and_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["pareto", "--seed", "5"], "[estimation]\nbootstrap_reps = 200\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("out/frontier.csv"));
    let h = generate_cohort(2000, 1, -0.1, &ScoreLaw::default(), 5).unwrap().scores();
    let c_rct = 0.5 * h.iter().sum::<f64>() / h.len() as f64;
    let rct = rows.iter().find(|r| r[0] == "rct").unwrap();
    assert!((num(&rct[2]) - c_rct).abs() <= 1e-9);
    let opt = rows.iter().find(|r| r[0] == "optimized_exogenous").unwrap();
    let sw = rows.iter().find(|r| r[0] == "switch" && num(&r[1]) == 0.5).unwrap();
    assert!(num(&opt[3]) <= num(&sw[3]));
    for r in rows.iter().filter(|r| r[7] == "ok") {
        assert!(num(&r[4]) <= num(&r[3]) && num(&r[3]) <= num(&r[5]), "{r:?}");
    }
    let bands = read_rows(&dir.path().join("out/bands.csv"));
    assert_eq!(bands.len(), rows.iter().filter(|r| r[3] != "NaN").count());
}

#[test]
fn trace_input_is_estimated() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("h,queue,treated,y\n");
    for i in 0..400 {
        let h = 0.2 + 0.5 * (i as f64 / 400.0);
        let q = 1 + (i * 7 % 2);
        let z = u8::from(q == 1);
        let y = h + if z == 1 { -0.1 } else { 0.0 };
        text.push_str(&format!("{h},{q},{z},{y}\n"));
    }
    let trace = dir.path().join("trace.csv");
    std::fs::write(&trace, text).unwrap();
    let cfg = format!(
        "[estimation]\ntrace = {:?}\nestimators = [\"dr_ate\", \"iv_ratio\"]\n",
        trace.display().to_string()
    );
    let out = run(dir.path(), &["estimate"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("out/estimates.csv"));
    assert_eq!(rows[0][5], "400");
    // noiseless outcomes with oracle means
    assert!((num(&rows[0][1]) + 0.1).abs() < 1e-9, "{rows:?}");
}

#[test]
fn propensity_rows_cover_each_queue() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["check-propensity"],
        "[execution]\nn_grid = [100, 300]\nmc_replications = 20\nmass_replications = 5\n",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_rows(&dir.path().join("out/propensity.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("100", "1"));
    assert_eq!(num(&rows[1][6]), 0.5);
}
