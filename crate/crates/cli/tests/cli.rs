use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn kinetic(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetic"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_passes_and_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kinetic(&["run", scenario("appendix2a_alpha1.json").to_str().unwrap(), "--grid-n", "201"], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS mass_drift")));
    assert!(!stdout(&o).contains("FAIL"));

    let s = summary(&out);
    assert_eq!(s["pass"], true);
    assert_eq!(s["metadata"]["nodes"], 201);

    // mass recomputed from evolution.csv matches summary.csv
    let mut rdr = csv::Reader::from_path(out.join("evolution.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["time", "node_index", "x", "value"]);
    let rows: Vec<(f64, f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect();
    let mut sum_rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let masses: Vec<(f64, f64)> =
        sum_rdr.records().map(|r| r.unwrap()).map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    assert_eq!(masses.len(), 201);
    assert_eq!(rows.len(), 201 * 201);
    for (k, (t, mass)) in masses.iter().enumerate() {
        let block = &rows[k * 201..(k + 1) * 201];
        assert!(block.iter().all(|r| r.0 == *t));
        let xs: Vec<f64> = block.iter().map(|r| r.1).collect();
        let trapz: f64 = (0..200).map(|i| 0.5 * (block[i].2 + block[i + 1].2) * (xs[i + 1] - xs[i])).sum();
        assert!((trapz - mass).abs() < 1e-12, "t = {t}: {trapz} vs {mass}");
    }

    let hcurves: Vec<_> = s["artifacts"].as_array().unwrap().iter().filter(|a| a.as_str().unwrap().starts_with("hcurve_")).collect();
    assert_eq!(hcurves.len(), 4);
}

#[test]
fn hcurve_reports_budget_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    let o = kinetic(&["hcurve", scenario("appendix2a_alpha1.json").to_str().unwrap(), "--grid-n", "201"], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("hcurve_xlogx.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["time", "H", "dissipation_rate", "boundary_term", "max_increase_so_far"]);
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(recs.iter().all(|r| r[2].parse::<f64>().unwrap() <= 0.0));
    // abs-dev is not twice differentiable: no dissipation column values
    let mut rdr = csv::Reader::from_path(out.join("hcurve_1_abs-dev-1.csv")).unwrap();
    assert!(rdr.records().all(|r| r.unwrap()[2].is_empty()));
}

#[test]
fn invariant_writes_density() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("inv");
    let o = kinetic(&["invariant", scenario("appendix2a_alpha1.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("invariant.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["node_index", "x", "pi", "gibbs"]);
    let n = rdr.records().count();
    assert_eq!(n, 401);
    assert_eq!(summary(&out)["metadata"]["invariant_unique"], true);
}

#[test]
fn absorbing_invariant_request_is_an_invariant_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abs");
    let o = kinetic(&["run", scenario("absorbing_invariant.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("NoInvariantDensity"));
    let s = summary(&out);
    assert_eq!(s["pass"], false);
    assert!(s["error"].as_str().unwrap().starts_with("NoInvariantDensity"));
}

#[test]
fn absorbing_run_without_invariant_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abs");
    let o = kinetic(&["run", scenario("ou_absorbing_run.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(summary(&out)["metadata"]["mass_final"].as_f64().unwrap() < 0.99);
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let mass: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert!(mass.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn absorbing_oracle_matches_survival() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "abs.json",
        r#"{
          "generator": {"catalog": "ornstein-uhlenbeck", "bounds": [-2, 2], "bc": "absorbing"},
          "grid": {"n": 81},
          "initial": {"gaussian": {"mean": [0.5], "sd": 0.4}},
          "oracle": {"particles": 40000, "dt": 1e-3, "seed": 3, "times": [0.3, 1.0], "l1_budget": 0.08,
                     "write_ensembles": false}
        }"#,
    );
    let out = tmp.path().join("o");
    let o = kinetic(&["oracle-compare", sc.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let s = summary(&out);
    let pair = s["metadata"]["survival[t=1]"].as_array().unwrap();
    let (grid, particles) = (pair[0].as_f64().unwrap(), pair[1].as_f64().unwrap());
    assert!(grid < 0.9);
    assert!((grid - particles).abs() < 0.03, "{grid} vs {particles}");
}

#[test]
fn input_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");

    let o = kinetic(&["run", scenario("negative_diffusion.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NonEllipticCoefficient"), "{}", stderr(&o));

    let p = write(tmp.path(), "syntax.json", "{\n  \"generator\": {\"catalog\": \"appendix2a\",}\n}\n");
    let o = kinetic(&["run", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let p = write(tmp.path(), "field.json", r#"{"generator": {"catalog": "appendix2a"}, "grid": {"nodes": 10}}"#);
    let o = kinetic(&["run", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`grid.nodes`"), "{}", stderr(&o));

    let p = write(tmp.path(), "catalog.json", r#"{"generator": {"catalog": "nope"}, "initial": "equilibrium"}"#);
    let o = kinetic(&["run", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnknownExample"));

    let o = kinetic(&["run", scenario("appendix2a_alpha1.json").to_str().unwrap(), "--seed", "3"], &out);
    assert_eq!(o.status.code(), Some(2));

    let o = kinetic(&["run", tmp.path().join("missing.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));

    let p = write(tmp.path(), "empty.json", r#"{"terms": [], "x0": [0]}"#);
    let o = kinetic(&["pawula", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pawula_certificate_for_third_order_term() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = kinetic(&["pawula", scenario("pawula_c3.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    let cert: Value = serde_json::from_str(&std::fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert!((cert["value"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(cert["verified_local_max"], true);
    assert_eq!(cert["multi_index"], serde_json::json!([3]));
    assert!(stdout(&o).contains("witness g = "));
}

#[test]
fn pawula_second_order_generator_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = kinetic(&["pawula", scenario("appendix2a_pawula.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!out.join("certificate.json").exists());

    let o = kinetic(&["pawula", scenario("pawula_fourth_order_2d.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
}

fn small_oracle(dir: &Path) -> PathBuf {
    write(
        dir,
        "oracle.json",
        r#"{
          "generator": {"catalog": "ornstein-uhlenbeck", "bounds": [-8, 8]},
          "grid": {"n": 81},
          "initial": {"gaussian": {"mean": [1.0], "sd": 0.5}},
          "oracle": {"particles": 20000, "dt": 2e-3, "seed": 11, "times": [0.2, 0.5],
                     "l1_budget": 0.1,
                     "moments": {"points": [[0.5]], "t": 0.02, "particles": 5000}}
        }"#,
    )
}

#[test]
fn oracle_compare_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = small_oracle(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    let oa = kinetic(&["oracle-compare", sc.to_str().unwrap()], &a);
    let ob = kinetic(&["oracle-compare", sc.to_str().unwrap()], &b);
    let oc = kinetic(&["oracle-compare", sc.to_str().unwrap(), "--seed", "12"], &c);
    assert_eq!(oa.status.code(), Some(0), "{}{}", stdout(&oa), stderr(&oa));
    assert_eq!(ob.status.code(), Some(0));
    assert_eq!(oc.status.code(), Some(0));

    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
    assert_eq!(read(&a, "ensemble_1.csv"), read(&b, "ensemble_1.csv"));
    assert_ne!(read(&a, "ensemble_1.csv"), read(&c, "ensemble_1.csv"));

    let s = summary(&a);
    assert_eq!(s["metadata"]["seed"], 11);
    assert_eq!(summary(&c)["metadata"]["seed"], 12);
    let m = &s["metadata"]["moments"][0];
    assert!((m["particles"]["b_hat"][0].as_f64().unwrap() + 0.5).abs() < 5.0 * m["particles"]["b_se"][0].as_f64().unwrap());
    // lambda_max * t is far above 0.1 on this grid
    assert!(s["warnings"][0].as_str().unwrap().starts_with("MomentBiasWarning"));

    let mut rdr = csv::Reader::from_path(a.join("ensemble_0.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["particle_id", "x", "absorbed_flag"]);
    assert_eq!(rdr.records().count(), 20000);
}

#[test]
fn two_dimensional_scenario_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("2d");
    let o = kinetic(&["hcurve", scenario("ou_2d.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("evolution.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["time", "node_index", "x1", "x2", "value"]);
}

#[test]
fn tolerance_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tol");
    let o = kinetic(&["run", scenario("ou_absorbing_run.json").to_str().unwrap(), "--tol", "1e-8"], &out);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(&out)["metadata"]["tol"], 1e-8);
    let o = kinetic(&["run", scenario("ou_absorbing_run.json").to_str().unwrap(), "--tol", "0.5"], &out);
    assert_eq!(o.status.code(), Some(2));
}
