use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn optcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optcurve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    optcurve(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_gd_square_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "run-gd", "--fn", "square", "--x0", "3", "--eta", "0.1", "--steps", "20",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let f: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(f.len(), 21);
    for (got, want) in f.iter().zip([9.0, 5.76, 3.6864]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    for name in ["report.json", "metadata.json", "config.txt"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn counterexample_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["counterexample", "--eta", "1.9"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("counterexample.json")).unwrap()).unwrap();
    assert_eq!(v["violated"], true);
    let f: Vec<f64> = v["f"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    for (got, want) in f.iter().zip([1.62, 1.12, 0.0392]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["counterexample", "--eta", "1.5"],
        &["run-gd", "--fn", "no_such_fn", "--x0", "1", "--eta", "0.1"],
        &["run-gd", "--fn", "square", "--eta", "0.1"],
        &["verify", "--trials", "0"],
        &["fuzz", "--mode", "reckless"],
    ];
    for args in cases {
        let o = run_in(&dir.path().join("x"), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    let o = optcurve(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn precondition_is_named() {
    let o = optcurve(&["counterexample", "--eta", "2.5"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("eta must lie in (1.75, 2)"), "{err}");
}

#[test]
fn verify_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify", "--seed", "42", "--trials", "20"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("6/6 theorem checks passed"));
}

#[test]
fn scan_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "scan", "--fn", "huber", "--x0", "-1.8", "--grid", "50", "--steps", "10",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert!(text.starts_with("eta,convex,monotone,grad_monotone,first_violation\n"));
    assert_eq!(text.lines().count(), 51);
    let s: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("scan_summary.json")).unwrap()).unwrap();
    assert!((s["empirical_threshold"].as_f64().unwrap() - 1.75).abs() < 1e-6);
}

#[test]
fn fuzz_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["fuzz", "--seed", "1", "--trials", "200", "--mode", "danger"],
    );
    assert_eq!(o.status.code(), Some(0));
    let lines = fs::read_to_string(dir.path().join("violations.jsonl")).unwrap();
    assert!(lines.lines().count() > 0);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["monotone_decreasing"], true);
    }
    let o = run_in(
        &dir.path().join("safe"),
        &["fuzz", "--seed", "1", "--trials", "200"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read(dir.path().join("safe/violations.jsonl"))
        .unwrap()
        .is_empty());
}

#[test]
fn run_flow_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "run-flow",
            "--fn",
            "log_sum_exp",
            "--x0",
            "1,-2",
            "--eta",
            "0.5",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let flow = fs::read_to_string(dir.path().join("flow.csv")).unwrap();
    assert!(flow.starts_with("t,f,grad_norm,x0,x1\n"));
    assert!(dir.path().join("euler.csv").exists());
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.txt");
    fs::write(&cfg, "command=run-gd\nfn=square\nx0=3\neta=0.1\nsteps=5\n").unwrap();
    let out = dir.path().join("o");
    let o = optcurve(&[
        "run-gd",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let replay = fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(
        replay,
        "command=run-gd\nfn=square\nx0=3.0\neta=0.1\nsteps=7\n"
    );
    assert_eq!(
        fs::read_to_string(out.join("trajectory.csv"))
            .unwrap()
            .lines()
            .count(),
        9
    );

    let o = optcurve(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["fuzz", "--seed", "9", "--trials", "300", "--mode", "danger"];
    let mut results = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(threads);
        let o = Command::new(env!("CARGO_BIN_EXE_optcurve"))
            .args(args)
            .args(["--out", out.to_str().unwrap()])
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        results.push(read_dir_sorted(&out));
    }
    assert_eq!(results[0], results[1]);
}
