use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steepwell"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&std::ffi::OsStr], threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args);
    if let Some(t) = threads {
        c.env("STEEPWELL_THREADS", t);
    }
    c.output().unwrap()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const SMALL: &str = r#"
experiment = "identities"
seed = 3

[grid]
dim = 1
box_half_width = 3.0
points_per_axis = 41

[omega]
shape = "box"
params = [-1.0, 1.0]

[well]
width = 0.4

[params]
beta_schedule = [1, 1000]

[identities]
draws = 40
power_draws = 10
minmax_trials = 4
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn identities_run_writes_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("nested/out");
    let o = run(&[cfg.as_os_str(), "--out".as_ref(), out.as_os_str()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["experiment"], "identities");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let text = std::fs::read_to_string(out.join("identities.csv")).unwrap();
    assert!(text.starts_with("identity,value,threshold,passed\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with("true")));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["spectral.toml", "trotter_kato.toml", "nonlinear.toml"] {
        let a = tmp.path().join(format!("{name}-a"));
        let b = tmp.path().join(format!("{name}-b"));
        let cfg = config(name);
        let o1 = run(&[cfg.as_os_str(), "--out".as_ref(), a.as_os_str()], Some("1"));
        let o2 = run(&[cfg.as_os_str(), "--out".as_ref(), b.as_os_str()], Some("4"));
        assert!(o1.status.success() && o2.status.success(), "{name}");
        let (x, y) = (csvs(&a), csvs(&b));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn seed_and_experiment_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("spectral.toml");
    let out = tmp.path().join("o");
    let o = run(
        &[cfg.as_os_str(), "--experiment".as_ref(), "resolvent".as_ref(), "--seed".as_ref(), "99".as_ref(), "--out".as_ref(), out.as_os_str()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["experiment"], "resolvent");
    assert!(out.join("resolvent.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        SMALL.replace("seed = 3", "seed = 3\ngama = 1.0"),
        SMALL.replace("[1, 1000]", "\"100, 10\""),
        SMALL.replace("width = 0.4", "width = 0.4\nprofile = \"cubic\""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let dir = tmp.path().join(i.to_string());
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = write_config(&dir, text);
        let o = run(&[cfg.as_os_str()], None);
        assert_eq!(o.status.code(), Some(2), "case {i}");
        let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(rec["kind"], "config");
        assert!(rec["line"].as_u64().is_some(), "case {i}: {rec}");
    }
    let o = run(&[tmp.path().join("missing.toml").as_os_str()], None);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[config("spectral.toml").as_os_str(), "--experiment".as_ref(), "bogus".as_ref()], None);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[config("spectral.toml").as_os_str(), "--experiment".as_ref(), "nonlinear".as_ref()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn study_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("nonlinear.toml")).unwrap().replace("picard_tol = 1e-8", "picard_tol = 1e-8\nwindow_tau = 0.5");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("failed");
    let o = run(&[cfg.as_os_str(), "--out".as_ref(), out.as_os_str()], None);
    assert_eq!(o.status.code(), Some(3));
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["kind"], "study");

    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&[cfg.as_os_str(), "--out".as_ref(), blocker.join("sub").as_os_str()], None);
    assert_eq!(o.status.code(), Some(3));
}
