use std::path::Path;
use std::process::{Command, Output};

fn splitlearn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitlearn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn odd_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitlearn(&["gen-data", "--M", "201", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--help"));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn unknown_flags_and_schemes_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(splitlearn(&["gen-data", "--bogus"], dir.path()).status.code(), Some(2));
    let out = splitlearn(&["project", "--scheme", "nope", "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = splitlearn(&["project", "--scheme", "trotter", "--out", "p"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitlearn(&["eval", "--scheme", "strang", "--data", "missing", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn empty_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = splitlearn(&["gen-data", "--M", "32", "--L", "8", "--count", "0", "--out", "d"], dir.path());
    ok(&out);
    let manifest = read(dir.path().join("d/manifest.txt"));
    assert!(manifest.contains("count = 0"), "{manifest}");
    assert_eq!(std::fs::metadata(dir.path().join("d/data.bin")).unwrap().len(), 0);
    let run = read(dir.path().join("d/run-manifest.txt"));
    assert!(run.starts_with("command = gen-data\n"));
    assert!(run.contains("config.xcent = -2.23606797749979"));
    assert!(run.contains("config.potential = [1.0,-10.0,0.0]"));
}

#[test]
fn project_learn5a() {
    let dir = tempfile::tempdir().unwrap();
    let scheme = dir.path().join("learn.scheme");
    std::fs::write(&scheme, "name = mine\nK = 5\ngamma = 0.3627, -0.1003, -0.1353\n").unwrap();
    let out = splitlearn(&["project", "--scheme", "learn.scheme", "--out", "p"], dir.path());
    ok(&out);
    let text = read(dir.path().join("p/projected.scheme"));
    let gamma: Vec<f64> = text
        .lines()
        .find_map(|l| l.strip_prefix("gamma = "))
        .unwrap()
        .split(',')
        .map(|s| s.trim().parse().unwrap())
        .collect();
    for (g, want) in gamma.iter().zip([0.346, -0.112, -0.132]) {
        assert!((g - want).abs() < 0.02, "{gamma:?}");
    }
    assert!(text.starts_with("name = mineproj\n"));
}

#[test]
fn visualize_strang_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    ok(&splitlearn(&["visualize", "--scheme", "strang", "--out", "v"], dir.path()));
    let csv = read(dir.path().join("v/path-1-strang.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.first(), Some(&"0,0"));
    assert_eq!(rows.last(), Some(&"1,1"));
    let svg = read(dir.path().join("v/paths.svg"));
    assert!(svg.contains("<svg") && svg.contains("version=\"1.1\""));
    assert!(svg.contains("<polyline"));
}

#[test]
fn converge_reports_subflow_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    ok(&splitlearn(
        &["gen-data", "--M", "64", "--L", "8", "--count", "4", "--out", "d"],
        dir.path(),
    ));
    ok(&splitlearn(
        &["converge", "--scheme", "learn5a,learn8a", "--ns", "70", "--data", "d", "--out", "c"],
        dir.path(),
    ));
    let csv = read(dir.path().join("c/convergence.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scheme,N,h,subflowEvals,q15.9,median,q84.1,mean"));
    let evals: Vec<(String, String)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[3].to_string())
        })
        .collect();
    assert_eq!(evals, [("learn5a".into(), "561".into()), ("learn8a".into(), "981".into())]);
}

#[test]
fn mismatched_dataset_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    ok(&splitlearn(&["gen-data", "--M", "32", "--L", "8", "--count", "3", "--out", "d"], dir.path()));
    let out = splitlearn(
        &["train", "--M", "32", "--L", "9", "--train", "d", "--valid", "d", "--out", "t"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("L"));
    assert!(!dir.path().join("t").exists());
}

#[test]
fn train_replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&splitlearn(&["gen-data", "--M", "32", "--L", "8", "--count", "12", "--seed", "1", "--out", "tr"], d));
    ok(&splitlearn(&["gen-data", "--M", "32", "--L", "8", "--count", "6", "--seed", "2", "--out", "va"], d));
    let train = [
        "train", "--M", "32", "--L", "8", "--train", "tr", "--valid", "va", "--candidates",
        "grid:-0.5:0.4:0.45", "--iters", "3", "--batch", "4", "--seed", "9",
    ];
    let mut args = train.to_vec();
    args.extend(["--out", "a"]);
    ok(&splitlearn(&args, d));
    let manifest = read(d.join("a/run-manifest.txt"));
    for key in ["config.lr = 0.01", "config.delta = 0.15", "config.iters = 3", "seed = 9"] {
        assert!(manifest.contains(key), "{key} missing from\n{manifest}");
    }
    ok(&splitlearn(&["replay", "--manifest", "a/run-manifest.txt", "--out", "b"], d));
    for f in ["leaderboard.csv", "trace.csv", "best.scheme"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    // the recorded inputs are untouched
    assert!(read(d.join("tr/manifest.txt")).contains("count = 12"));

    let mut single = vec!["--threads", "1"];
    single.extend(train);
    single.extend(["--out", "c"]);
    ok(&splitlearn(&single, d));
    assert_eq!(read(d.join("a/trace.csv")), read(d.join("c/trace.csv")));
}

#[test]
fn zero_iterations_keeps_screened_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&splitlearn(&["gen-data", "--M", "32", "--L", "8", "--count", "5", "--out", "va"], d));
    ok(&splitlearn(
        &[
            "train", "--M", "32", "--L", "8", "--train", "va", "--valid", "va", "--candidates",
            "grid:-0.5:0.4:0.3", "--iters", "0", "--out", "t",
        ],
        d,
    ));
    let manifest = read(d.join("t/run-manifest.txt"));
    let screened: usize = manifest
        .lines()
        .find_map(|l| l.strip_prefix("result.screened = "))
        .unwrap()
        .parse()
        .unwrap();
    let board = read(d.join("t/leaderboard.csv"));
    assert_eq!(board.lines().count() - 1, screened);
    assert!(board.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn eval_fit_and_advantage_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&splitlearn(&["gen-data", "--M", "64", "--L", "8", "--count", "6", "--out", "data"], d));
    ok(&splitlearn(&["eval", "--scheme", "strang,learn5a", "--data", "data", "--out", "e"], d));
    let eval = read(d.join("e/eval.csv"));
    assert_eq!(eval.lines().count(), 3);
    assert!(eval.lines().nth(2).unwrap().starts_with("learn5a,5,70,"));

    ok(&splitlearn(
        &[
            "converge", "--scheme", "strang,yoshida", "--ns", "35,70,140,280,560,1120,2240",
            "--data", "data", "--out", "c",
        ],
        d,
    ));
    ok(&splitlearn(&["fit", "--input", "c/convergence.csv", "--scheme", "strang", "--out", "f"], d));
    let fit = read(d.join("f/fit.csv"));
    assert!(fit.starts_with("scheme,C2,C4,C6,"));
    assert_eq!(fit.lines().count(), 2);

    ok(&splitlearn(
        &["advantage", "--input", "c/convergence.csv", "--baseline", "strang", "--budget", "500", "--out", "a"],
        d,
    ));
    let adv = read(d.join("a/advantage.csv"));
    let strang = adv.lines().find(|l| l.starts_with("strang,")).unwrap();
    assert!(strang.contains(",1.0000,1.0000,"), "{strang}");
    let out = splitlearn(&["advantage", "--input", "c/convergence.csv", "--baseline", "none", "--out", "a2"], d);
    assert_eq!(out.status.code(), Some(2));
}
