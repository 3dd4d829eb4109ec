use std::fs;
use std::path::Path;
use std::process::Command;

use qtraj::reference::KeepSwitchModel;

fn qtraj(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qtraj")).args(args).env_remove("QTRAJ_THREADS").output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ks = write(dir.path(), "ks.json", r#"{"model": {"keep_switch": 0.3}}"#);
    assert_eq!(qtraj(&["validate", &ks]).0, 0);

    let family = KeepSwitchModel::new(0.3).unwrap().family().to_json().unwrap();
    let bare = write(dir.path(), "family.json", &family);
    assert_eq!(qtraj(&["validate", &bare]).0, 0);

    let broken = write(dir.path(), "broken.json", r#"{"dim": 2, "operators": [[[[1, 0], [0, 0]], [[0, 0], [0.5, 0]]]]}"#);
    let (code, stdout, _) = qtraj(&["validate", &broken]);
    assert_eq!(code, 1);
    assert!(stdout.contains("\"residual\": 0.75"), "{stdout}");

    let truncated = write(dir.path(), "truncated.json", &family[..family.len() / 2]);
    let (code, _, stderr) = qtraj(&["validate", &truncated]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line") && stderr.contains("column"), "{stderr}");

    assert_eq!(qtraj(&["validate", dir.path().join("missing.json").to_str().unwrap()]).0, 2);
    assert_eq!(qtraj(&["frobnicate"]).0, 2);
}

#[test]
fn identity_family_fails_the_assumption_gate() {
    let dir = tempfile::tempdir().unwrap();
    let id = write(dir.path(), "id.json", r#"{"model": {"dim": 2, "operators": [[[[1, 0], [0, 0]], [[0, 0], [1, 0]]]]}}"#);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(qtraj(&["check", &id, "--out", out]).0, 3);
    let (code, _, stderr) = qtraj(&["clt", &id, "--out", out]);
    assert_eq!(code, 3);
    assert!(stderr.contains("erg_holds"), "{stderr}");
    assert!(Path::new(out).join("assumptions.json").exists());
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ks = write(dir.path(), "ks.json", r#"{"model": {"keep_switch": 0.3}}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let (code, _, stderr) = qtraj(&["simulate", &ks, "--n", "1000", "--seed", "7", "--replicas", "3", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{stderr}");
    }
    for r in 0..3 {
        let name = format!("trajectory_{r:04}.csv");
        let x = fs::read(a.join(&name)).unwrap();
        assert_eq!(x, fs::read(b.join(&name)).unwrap());
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("step,branch_index,weight,re_0,im_0,re_1,im_1,distance_to_estimator\n"));
        assert_eq!(text.lines().count(), 1002);
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn clt_report_has_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let ks = write(dir.path(), "ks.json", r#"{"model": {"keep_switch": 0.3}, "observable": "population:0", "experiment": {"seed": 3}}"#);
    let out = dir.path().join("out");
    let (code, _, stderr) = qtraj(&["clt", &ks, "--n", "500", "--replicas", "50", "--plot", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("clt.json")).unwrap()).unwrap();
    assert!(report["p_value"].is_f64());
    assert_eq!(report["moments"]["gamma_method"], "atoms_exact");
    assert!(fs::read_to_string(out.join("clt_samples.csv")).unwrap().starts_with("replica,normalized\n"));
    assert!(out.join("clt_histogram.svg").exists());
}

#[test]
fn bad_observable_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let ks = write(dir.path(), "ks.json", r#"{"model": {"keep_switch": 0.3}}"#);
    let out = dir.path().join("out");
    assert_eq!(qtraj(&["simulate", &ks, "--observable", "population:5", "--out", out.to_str().unwrap()]).0, 2);
    let unknown = write(dir.path(), "unknown.json", r#"{"model": {"keep_switch": 0.3}, "experiment": {"sede": 1}}"#);
    assert_eq!(qtraj(&["simulate", &unknown, "--out", out.to_str().unwrap()]).0, 2);
}
