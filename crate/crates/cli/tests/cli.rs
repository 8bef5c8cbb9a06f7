use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[problem]
lf_nodes = 1500
hf_nodes = 2500

[problem.grid]
nx = 24
ny = 24

[pool]
n_lf = 60
n_hf = 30

[study]
hf_sizes = [10, 20]
lf_sizes = [10, 40]
mf_lf = 40
mf_hf_sizes = [10, 20]

[study.settings]
holdout = 8
repeats = 2

[optimization]
draws = 1
n_starts = 2
runs = [
    { method = "HF", n_lf = 0, n_hf = 20 },
    { method = "MF", n_lf = 40, n_hf = 15 },
]
"#;

fn mfpod(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_mfpod"))
        .args(["--preset", "desk", "--config", cfg.to_str().unwrap()])
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn doe_writes_requested_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mfpod(dir.path(), &["doe", "--n", "1500", "--seed", "4", "--out", "d.csv"]));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1501);
    assert_eq!(lines[0], "index,CR1,CR2,H1,H2,W1,W2,F1");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
}

#[test]
fn doe_is_deterministic_in_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mfpod(dir.path(), &["doe", "--n", "50", "--seed", "1", "--out", "a.csv"]));
    ok(&mfpod(dir.path(), &["doe", "--n", "50", "--seed", "1", "--out", "b.csv"]));
    ok(&mfpod(dir.path(), &["doe", "--n", "50", "--seed", "2", "--out", "c.csv"]));
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mfpod(dir.path(), &["doe", "--bogus"]).status.code(), Some(1));
    assert_eq!(mfpod(dir.path(), &["nonsense"]).status.code(), Some(1));
    assert_eq!(mfpod(dir.path(), &["doe", "--n", "x", "--out", "a"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two_with_structured_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfpod(dir.path(), &["pod", "--data", "missing.json", "--out", "p.pod"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error code=io class=data message="), "{err}");

    std::fs::write(dir.path().join("bad.toml"), "nope = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mfpod"))
        .args(["--config", "bad.toml", "report", "--dump-config"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("code=config"));
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfpod(dir.path(), &["report", "--dump-config"]);
    ok(&out);
    std::fs::write(dir.path().join("dumped.toml"), &out.stdout).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_mfpod"))
        .args(["--config", "dumped.toml", "report", "--dump-config"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    ok(&again);
    assert_eq!(out.stdout, again.stdout);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("nx = 24"));
    assert!(text.contains("mask = true"));
    let unmasked = mfpod(dir.path(), &["--no-mask", "report", "--dump-config"]);
    ok(&unmasked);
    assert!(String::from_utf8(unmasked.stdout).unwrap().contains("mask = false"));
}

#[test]
fn pipeline_from_designs_to_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mfpod(d, &["doe", "--n", "40", "--seed", "3", "--out", "designs.csv"]));
    ok(&mfpod(
        d,
        &["simulate", "--designs", "designs.csv", "--n-hf", "20", "--strategy", "maximin", "--out-dir", "ds"],
    ));
    let manifest = "ds/manifest.json";
    ok(&mfpod(d, &["pod", "--data", manifest, "--k", "4", "--out", "hf.pod", "--curve", "curve.csv"]));
    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    let errs: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 20);
    assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    ok(&mfpod(d, &["train", "--data", manifest, "--method", "mf", "--holdout", "5", "--out", "mf.json"]));
    let out = mfpod(d, &["validate", "--model", "mf.json", "--data", manifest, "--holdout", "5"]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_val"], 5);
    assert!(report["rmse"].as_f64().unwrap() < 2.0);

    let out = mfpod(d, &["optimize", "--surrogate", "mf.json", "--starts", "2", "--truth", "--trace", "trace.csv"]);
    ok(&out);
    let res: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(res["x_star"].as_array().unwrap().len(), 7);
    assert_eq!(res["constraint_names"].as_array().unwrap().len(), 6);
    assert!(res["truth"]["three_sigma"].as_f64().unwrap() > 0.0);
    assert!(std::fs::read_to_string(d.join("trace.csv")).unwrap().starts_with("iter,f,"));
}

#[test]
fn native_fields_regrid_to_the_direct_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mfpod(d, &["doe", "--n", "6", "--seed", "5", "--out", "designs.csv"]));
    ok(&mfpod(d, &["simulate", "--designs", "designs.csv", "--n-hf", "3", "--out-dir", "grid"]));
    ok(&mfpod(d, &["simulate", "--designs", "designs.csv", "--n-hf", "3", "--out-dir", "nat", "--native"]));
    assert!(d.join("nat/native/hf_00002.csv").exists());
    ok(&mfpod(d, &["regrid", "--data", "nat/manifest.json", "--out", "rg/manifest.json"]));
    for f in ["lf_00000", "lf_00005", "hf_00000", "hf_00002"] {
        let a = std::fs::read(d.join(format!("grid/fields/{f}.grid"))).unwrap();
        let b = std::fs::read(d.join(format!("rg/fields/{f}.grid"))).unwrap();
        assert_eq!(a, b, "{f}");
    }
    ok(&mfpod(
        d,
        &["regrid", "--input", "nat/native/hf_00001.csv", "--out", "one.grid"],
    ));
    assert_eq!(
        std::fs::read(d.join("one.grid")).unwrap(),
        std::fs::read(d.join("grid/fields/hf_00001.grid")).unwrap()
    );
}

#[test]
fn study_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mfpod(d, &["study", "--seed", "2", "--out-dir", "a"]));
    ok(&mfpod(d, &["study", "--seed", "2", "--out-dir", "b", "--no-optimize"]));
    for f in ["study.csv", "study_lf.csv", "study_hf.csv", "study_mf.csv", "reductions.csv", "config.toml"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(!d.join("b/optimization.json").exists());
    let out = mfpod(d, &["report", "--dir", "a"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Avg. improvement"));
    let summary = std::fs::read_to_string(d.join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    ok(&mfpod(d, &["report", "--dir", "b"]));
}
