use std::path::Path;
use std::process::{Command, Output};

fn mflab(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mflab"));
    cmd.args(args).env_remove("MFLAB_CACHE");
    if let Some(c) = cache {
        cmd.env("MFLAB_CACHE", c);
    }
    cmd.output().expect("binary runs")
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_QUANTUM: &str = r#"{"schema_version":1,"seed":5,"jobs":[
    {"experiment":"quantum_meanfield","grid":{"m":16,"l":6.283185307179586},"n_list":[2,3],"t_end":0.1,"dt":1e-3,"outputs":2}]}"#;

#[test]
fn lists_experiments() {
    let out = mflab(&["list-experiments"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.contains("joint_limit"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = config(d, "ok.json", SMALL_QUANTUM);
    assert_eq!(mflab(&["validate", &ok], None).status.code(), Some(0));

    let typo = config(d, "typo.json", r#"{"schema_version":1,"jobs":[{"experiment":"dobrushin","trails":3}]}"#);
    assert_eq!(mflab(&["validate", &typo], None).status.code(), Some(3));
    assert_eq!(mflab(&["run", &typo], None).status.code(), Some(3));
    let missing = d.join("absent.json");
    assert_eq!(mflab(&["validate", missing.to_str().unwrap()], None).status.code(), Some(3));

    let huge = config(
        d,
        "huge.json",
        r#"{"schema_version":1,"jobs":[{"experiment":"quantum_meanfield","grid":{"m":64,"l":6.0},"n_list":[5]}]}"#,
    );
    assert_eq!(mflab(&["validate", &huge], None).status.code(), Some(4));

    // a coarse step breaks the energy conservation checks
    let coarse = config(
        d,
        "coarse.json",
        r#"{"schema_version":1,"jobs":[{"experiment":"quantum_meanfield","grid":{"m":16,"l":6.283185307179586},"n_list":[2],"t_end":0.5,"dt":0.1,"outputs":1}]}"#,
    );
    let out = mflab(&["run", &coarse, "--out", d.join("coarse").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));

    let out = mflab(&["run", &ok, "--out", d.join("ok").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let job = d.join("ok/quantum_meanfield");
    for f in ["metrics.csv", "report.json", "plots/plots.json", "plots/plot_meanfield_N2.dat"] {
        assert!(job.join(f).exists(), "{f}");
    }
}

#[test]
fn deterministic_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "q.json", SMALL_QUANTUM);
    let cache = d.join("cache");
    let metrics = |out: &str| std::fs::read(d.join(out).join("quantum_meanfield/metrics.csv")).unwrap();

    assert!(mflab(&["run", &cfg, "--out", d.join("a").to_str().unwrap()], None).status.success());
    assert!(mflab(&["run", &cfg, "--out", d.join("b").to_str().unwrap()], Some(&cache)).status.success());
    assert!(cache.join("quantum_meanfield-N3.json").exists());
    assert!(mflab(&["run", &cfg, "--out", d.join("c").to_str().unwrap()], Some(&cache)).status.success());
    assert_eq!(metrics("a"), metrics("b"));
    assert_eq!(metrics("a"), metrics("c"));

    // a different seed changes the hash, so the checkpoints are refused
    let out = mflab(&["run", &cfg, "--seed", "6", "--out", d.join("e").to_str().unwrap()], Some(&cache));
    assert!(out.status.success());
    let report = std::fs::read_to_string(d.join("e/quantum_meanfield/report.json")).unwrap();
    assert!(report.contains("refused checkpoint"));
}
