use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn kamzero(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kamzero")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synthetic_run_converges_and_is_reproducible() {
    let cfg = config("synthetic.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = kamzero(&["run", "--config", cfg.to_str().unwrap()], a.path());
    assert_eq!(oa.status.code(), Some(0), "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = kamzero(&["run", "--config", cfg.to_str().unwrap()], b.path());
    assert_eq!(ob.status.code(), Some(0));
    for f in ["report.json", "trace.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let rep = json(&a.path().join("report.json"));
    assert_eq!(rep["verdict"], serde_json::json!("TorusConverged"));
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), rep["records"].as_array().unwrap().len() + 1);
}

#[test]
fn injected_zero_mode_term_exits_two() {
    let cfg = config("witness.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = kamzero(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&dir.path().join("report.json"));
    assert!(rep["verdict"]["NoTorusWitnessed"].is_object());
    let last = rep["records"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["witness"]["escaped"], serde_json::json!(true));
}

#[test]
fn nls_build_writes_series() {
    let cfg = config("nls.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = kamzero(&["nls-build", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("hamiltonian.tfs")).unwrap();
    let r = kamzero::TFSeries::from_text(&text).unwrap();
    assert!(!r.is_empty());
    assert!(r.is_real());
    let nf = json(&dir.path().join("normal_form.json"));
    assert_eq!(nf["omega"].as_array().unwrap().len(), 2);
}

#[test]
fn check_passes_on_nls() {
    let cfg = config("nls.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = kamzero(&["check", "--config", cfg.to_str().unwrap(), "--max-steps", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rep = json(&dir.path().join("check.json"));
    assert_eq!(rep["passed"], serde_json::json!(true));
    assert_eq!(rep["selection_violations"], serde_json::json!(0));
}

#[test]
fn measure_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    std::fs::write(&cfg, "mode = \"measure\"\n[model]\nsites = [1, 2]\nJmax = 4\n[schedule]\nr1 = 0.05\n[grid]\nlo = [0.001, 0.001]\nhi = [0.002, 0.002]\nsamples = [20, 20]\ngamma = [1e-3, 5e-4]\nkcut = 4\n").unwrap();
    let o = kamzero(&["measure", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let reps = json(&dir.path().join("measure.json"));
    assert_eq!(reps.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("measure.csv")).unwrap();
    assert!(csv.starts_with("family,k,threshold,excluded_fraction,analytic_bound\n"));
}

#[test]
fn bad_config_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "mode = \"synthetic\"\n[schedule]\ntau = 1.0\n").unwrap();
    let o = kamzero(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("schedule.tau"), "{err}");
}
