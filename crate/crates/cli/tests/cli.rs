use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use car_late::format::sig;
use car_late::input::{self, SpecFile};
use car_late_core::design::refined_strata_variance;
use car_late_core::dgp::{builtin_design, sample, sample_coarsened};
use car_late_core::rng::{child_stream, stream};
use car_late_core::{estimate_sat, Mechanism};
use serde_json::Value;
use tempfile::TempDir;

fn car_late(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_car-late")).args(args).env_remove("CAR_LATE_THREADS").output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn perfect_compliance_has_zero_standard_error() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "t.csv", "y,d,a,s\n1,1,1,x\n1,1,1,x\n0,0,0,x\n0,0,0,x\n");
    let v = json(&car_late(&["estimate", &csv, "--format", "json"]));
    for e in v["estimates"].as_array().unwrap() {
        assert_eq!(e["beta_hat"], 1.0);
        assert_eq!(e["se"], 0.0);
    }
    let human = car_late(&["estimate", &csv]);
    assert!(human.status.success());
}

#[test]
fn malformed_row_exits_2() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "t.csv", "y,d,a,s\n1,1,1,x\n0,0,2,x\n");
    let out = car_late(&["estimate", &csv]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));

    let csv = write(&dir, "u.csv", "y,d,a\n1,1,1\n");
    assert_eq!(car_late(&["estimate", &csv]).status.code(), Some(2));
    assert_eq!(car_late(&["estimate", "/nonexistent.csv"]).status.code(), Some(2));
}

#[test]
fn weak_first_stage_exits_3_naming_stratum() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "t.csv", "y,d,a,s\n1,1,1,ok\n0,0,0,ok\n1,0,1,bad\n0,1,0,bad\n");
    let out = car_late(&["estimate", &csv]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("\"bad\""), "{}", stderr(&out));
}

#[test]
fn emitted_data_round_trips() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("d1.csv");
    let p = path.to_str().unwrap();
    let out = car_late(&["simulate", "--design", "1", "--n", "100000", "--seed", "42", "--emit-data", p]);
    assert!(out.status.success(), "{}", stderr(&out));

    let expected = sample(&builtin_design(1).unwrap(), 100_000, Mechanism::Sbr, &mut child_stream(42, 0)).unwrap();
    let read = input::read_trial(&path, None).unwrap();
    assert_eq!(read.units(), expected.units());
    let fit = estimate_sat(&expected).unwrap();

    let v = json(&car_late(&["estimate", p, "--estimator", "sat", "--format", "json"]));
    let beta = v["estimates"][0]["beta_hat"].as_f64().unwrap();
    assert_eq!(beta, fit.beta_hat);
    assert!((beta - 1.0).abs() < 0.05, "{beta}");
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let args = ["simulate", "--design", "3", "--mechanism", "srs", "--n", "400", "--reps", "300", "--seed", "5", "--format", "json"];
    let base = car_late(&[&args[..], &["--threads", "1"]].concat());
    assert!(base.status.success());
    for t in ["2", "7"] {
        assert_eq!(car_late(&[&args[..], &["--threads", t]].concat()).stdout, base.stdout);
    }
    let env = Command::new(env!("CARGO_BIN_EXE_car-late")).args(args).env("CAR_LATE_THREADS", "3").output().unwrap();
    assert_eq!(env.stdout, base.stdout);

    let human = ["simulate", "--design", "1", "--n", "300", "--reps", "50", "--seed", "7"];
    assert_eq!(car_late(&human).stdout, car_late(&human).stdout);
}

#[test]
fn zero_reps_exits_2() {
    assert_eq!(car_late(&["simulate", "--design", "1", "--reps", "0"]).status.code(), Some(2));
    assert_eq!(car_late(&["simulate", "--design", "9"]).status.code(), Some(2));
}

#[test]
fn human_and_json_agree() {
    let args = ["simulate", "--design", "1", "--n", "500", "--reps", "100", "--seed", "1"];
    let human = String::from_utf8(car_late(&args).stdout).unwrap();
    let v = json(&car_late(&[&args[..], &["--format", "json"]].concat()));
    for e in v["estimators"].as_array().unwrap() {
        for key in ["avg_est", "avg_se", "avar", "avg_avar_est", "coverage"] {
            let x = sig(e[key].as_f64().unwrap());
            assert!(human.contains(&x), "{key} {x} missing from\n{human}");
        }
    }
}

#[test]
fn spec_file_matches_builtin_design() {
    let dir = TempDir::new().unwrap();
    let text = toml::to_string(&SpecFile::from_spec(&builtin_design(3).unwrap())).unwrap();
    let spec = write(&dir, "d3.toml", &text);
    let common = ["--n", "300", "--reps", "40", "--seed", "2", "--format", "json"];
    let a = json(&car_late(&[&["simulate", "--design", "3"][..], &common].concat()));
    let b = json(&car_late(&[&["simulate", "--spec", &spec][..], &common].concat()));
    assert_eq!(a["estimators"], b["estimators"]);
    assert_eq!(a["population"], b["population"]);

    let bad = write(&dir, "bad.toml", "constant_pi = true\n[[strata]]\nlabel = \"x\"\np = 0.5\n");
    assert_eq!(car_late(&["simulate", "--spec", &bad]).status.code(), Some(2));
}

#[test]
fn design_reports_optimal_propensity() {
    let out = car_late(&["design", "--design", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("constant pi_star = 0.6217"), "{text}");
    assert!(text.contains("with tau = 0"), "{text}");

    let v = json(&car_late(&["design", "--design", "1", "--pi-grid", "--format", "json"]));
    assert_eq!(v["grid"].as_array().unwrap().len(), 99);
    assert!((v["v_at_pi_star_s"].as_f64().unwrap() - 14.6696).abs() < 5e-4);
}

#[test]
fn design_refines_pilot_strata() {
    let dir = TempDir::new().unwrap();
    let fine = builtin_design(2).unwrap();
    let mapping: BTreeMap<String, String> =
        fine.labels().iter().enumerate().map(|(i, l)| (l.clone(), format!("{}", i / 2 + 1))).collect();
    let pilot = sample_coarsened(&fine, 20_000, Mechanism::Sbr, &mapping, &mut stream(8)).unwrap();
    let path = dir.path().join("pilot.csv");
    input::write_trial(&pilot, fs::File::create(&path).unwrap()).unwrap();
    let p = path.to_str().unwrap();

    let v = json(&car_late(&["design", "--csv", p, "--refine-column", "s_fine", "--format", "json"]));
    let r = refined_strata_variance(&pilot).unwrap();
    assert_eq!(v["refinement"]["v_sat_fine"].as_f64().unwrap(), r.fine.v_sat_hat);
    assert_eq!(v["refinement"]["v_sat_coarse"].as_f64().unwrap(), r.coarse.v_sat_hat);
    assert_eq!(v["refinement"]["ess"].as_f64().unwrap(), r.ess);

    let out = car_late(&["design", "--csv", p, "--refine-column", "zone"]);
    assert_eq!(out.status.code(), Some(2));
}

fn assigned(out: &Output) -> Vec<String> {
    assert!(out.status.success(), "{}", stderr(out));
    String::from_utf8_lossy(&out.stdout).lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

#[test]
fn assign_blocks_and_validates() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "s.csv", "id,s\n1,x\n2,x\n3,x\n4,x\n");
    let a = assigned(&car_late(&["assign", &csv, "--mechanism", "sbr", "--pi", "0.5", "--seed", "9"]));
    assert_eq!(a.iter().filter(|x| *x == "1").count(), 2);
    assert_eq!(a, assigned(&car_late(&["assign", &csv, "--seed", "9"])));
    assert_eq!(car_late(&["assign", &csv, "--pi", "1.0"]).status.code(), Some(2));

    let out_path = dir.path().join("out.csv");
    let o = out_path.to_str().unwrap();
    assert!(car_late(&["assign", &csv, "--mechanism", "srs", "--output", o]).status.success());
    let text = fs::read_to_string(Path::new(o)).unwrap();
    assert!(text.starts_with("id,s,a\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn tau_file_must_cover_strata() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "t.csv", "y,d,a,s\n1,1,1,x\n0,0,0,x\n2,1,1,y\n0,0,0,y\n1.5,1,1,y\n0.2,1,0,y\n0,0,1,y\n");
    let tau = write(&dir, "tau.csv", "s,tau\nx,0\n");
    assert_eq!(car_late(&["estimate", &csv, "--tau-file", &tau]).status.code(), Some(2));
    let tau = write(&dir, "tau2.csv", "s,tau\nx,0\ny,0.5\n");
    let v = json(&car_late(&["estimate", &csv, "--tau-file", &tau, "--format", "json"]));
    assert_eq!(v["per_stratum"][1]["tau"], 0.5);
    let tau = write(&dir, "tau3.csv", "s,tau\nx,0\ny,1.5\n");
    assert_eq!(car_late(&["estimate", &csv, "--tau-file", &tau]).status.code(), Some(2));
}
