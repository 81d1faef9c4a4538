use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], config: &str, dir: &Path) -> (Output, PathBuf) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_cellshock"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    (output, out)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BURGERS: &str = "eps = 0.0\n[system]\nid = \"burgers\"\nc = 1.0\n[profile]\nhalf_length = 20.0\n";

// The tuned coupled family with coincident axial speeds at the left state.
const DEGENERATE: &str = "eps = 0.0\n[system]\nid = \"coupled\"\na = 10.0\n";

#[test]
fn burgers_profile_is_the_tanh_front() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(&["profile"], BURGERS, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("profile.csv")).unwrap();
    let mut worst = 0.0_f64;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let x: f64 = rec[0].parse().unwrap();
        let u: f64 = rec[1].parse().unwrap();
        worst = worst.max((u + (x / 2.0).tanh()).abs());
    }
    assert!(worst < 1e-8, "sup error {worst}");
    let report = json(&out.join("hypotheses.json"));
    assert_eq!(report["ok"], true);
    assert_eq!(report["schema"], "cellshock.hypotheses");
}

#[test]
fn manifest_checksums_match_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(&["profile"], BURGERS, dir.path());
    assert!(o.status.success());
    let manifest = json(&out.join("manifest.json"));
    let artifacts = manifest["artifacts"].as_array().unwrap();
    let names: Vec<&str> = artifacts.iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(names.contains(&"profile.csv") && names.contains(&"hypotheses.json") && names.contains(&"config.toml"), "{names:?}");
    for a in artifacts {
        let data = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"].as_u64().unwrap(), data.len() as u64);
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn echoed_config_reproduces_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(&["profile"], BURGERS, dir.path());
    assert!(o.status.success());
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    let again = tempfile::tempdir().unwrap();
    let (o2, out2) = run(&["profile"], &echo, again.path());
    assert!(o2.status.success());
    assert_eq!(std::fs::read(out.join("profile.csv")).unwrap(), std::fs::read(out2.join("profile.csv")).unwrap());
    assert_eq!(json(&out.join("manifest.json"))["artifacts"][1], json(&out2.join("manifest.json"))["artifacts"][1]);
}

#[test]
fn invalid_eps_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run(&["profile"], "eps = 5.0\n[system]\nid = \"burgers\"\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside admissible range"));
}

#[test]
fn unknown_key_exits_with_input_code_and_location() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run(&["profile"], "[system]\nid = \"burgers\"\n[duct]\nwidth = 3\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4") && err.contains("width"), "{err}");
}

#[test]
fn hypothesis_violation_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(&["profile"], DEGENERATE, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json(&out.join("hypotheses.json"))["h1_ok"], false);
}

#[test]
fn force_emits_report_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(&["profile", "--force"], DEGENERATE, dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert_eq!(json(&out.join("hypotheses.json"))["h1_ok"], false);
}

#[test]
fn stable_scalar_has_no_unstable_roots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "eps = 0.0\n[system]\nid = \"burgers\"\nc = 0.4\nd = 0.7\n[profile]\nhalf_length = 20.0\n";
    let (o, out) = run(&["stability", "--threads", "2"], cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("stability.json"));
    assert_eq!(doc["viscous"]["unstable_roots"], 0);
    assert!(doc["refined"]["beta"][0].as_f64().unwrap() > 0.0);
    assert_eq!(doc["inviscid"]["one_dimensional_instability"], false);
    assert_eq!(doc["crossing"]["near"], false);
    assert!(out.join("delta_scan.csv").exists());
}

#[test]
fn tuned_family_is_flagged_at_the_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "eps = 0.0\n[system]\nid = \"coupled\"\n[profile]\nhalf_length = 10.0\ngrid_size = 4000\n[stability]\nxis = [0.5]\n";
    let (o, out) = run(&["stability"], cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("stability.json"));
    assert_eq!(doc["crossing"]["near"], true);
    assert_eq!(doc["crossing"]["direction"], "destabilizing");
    assert!(doc["crossing"]["d_eps_re_beta"].as_f64().unwrap() < 0.0);
}

#[test]
fn sweep_writes_one_profile_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "eps_sweep = [0.0, 0.3]\n[system]\nid = \"burgers\"\nd = 0.5\n[profile]\nhalf_length = 20.0\n";
    let (o, out) = run(&["profile"], cfg, dir.path());
    assert!(o.status.success());
    assert!(out.join("profile_0.csv").exists() && out.join("profile_1.csv").exists());
    assert_eq!(json(&out.join("hypotheses_1.json"))["eps"], 0.3);
}

#[test]
fn tuned_cascade_reports_first_onset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[system]\nid = \"coupled\"\n[profile]\nhalf_length = 10.0\ngrid_size = 4000\n[duct]\nM = 10.0\nk_max = 1\ndirect = false\n";
    let (o, out) = run(&["cascade"], cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("cascade.json"));
    let ev = &doc["events"][0];
    assert_eq!(ev["k"], 1);
    let eps1 = ev["eps_k"].as_f64().unwrap();
    assert!(eps1 > 0.2 && eps1 < 0.35, "{eps1}");
    assert_eq!(ev["hopf"]["ok"], true);
    assert!(out.join("cascade.csv").exists());
}

#[test]
fn simulate_writes_diagnostics_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "eps = 0.0\n[system]\nid = \"burgers\"\nc = 0.4\nd = 0.7\n[profile]\nhalf_length = 20.0\n\
               [simulate]\nhalf_length = 20.0\nn1 = 201\nn2 = 8\nt_final = 2.0\noutput_every = 0.1\nk_max = 2\n\
               [[simulate.seeds]]\nkind = \"mode\"\nk = 1\namplitude = 0.01\n";
    let (o, out) = run(&["simulate"], cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("oscillation.json"));
    assert_eq!(doc["status"], "completed");
    assert!(doc["oscillation"].is_null());
    let rows = csv::Reader::from_path(out.join("diagnostics.csv")).unwrap().records().count();
    assert_eq!(rows, 21);
    let snap = std::fs::read_to_string(out.join("snapshot.txt")).unwrap();
    assert!(snap.starts_with("# cellshock snapshot v1"));
    assert_eq!(snap.lines().filter(|l| !l.starts_with('#')).count(), 201 * 8);
}

#[test]
fn missing_config_is_an_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_cellshock")).arg("profile").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
