use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use invbench::report::RECORD_HEADER;

const BIN: &str = env!("CARGO_BIN_EXE_invbench");

fn invbench(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--n-per-env",
        "200",
        "--trials",
        "2",
        "--steps",
        "50",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    invbench(&args)
}

#[test]
fn oracle_run_writes_one_record_per_env_and_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(
        dir.path(),
        &["--problem", "example1", "--method", "Oracle", "--reps", "2"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), RECORD_HEADER.join(","));
    assert_eq!(lines.count(), 6);
    assert!(dir.path().join("table.txt").exists());
    assert!(dir.path().join("table.csv").exists());
}

#[test]
fn identical_invocations_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--problem",
        "example2s,example3",
        "--reps",
        "2",
        "--seed",
        "9",
    ];
    assert!(small_run(a.path(), &args).status.success());
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "3"]);
    assert!(small_run(b.path(), &with_workers).status.success());
    for f in ["records.csv", "table.txt", "table.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn table_round_trip_reproduces_rendered_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(
        dir.path(),
        &["--problem", "example1,example3s", "--reps", "2"],
    );
    assert!(out.status.success());
    let records = dir.path().join("records.csv");
    let table = invbench(&["table", records.to_str().unwrap()]);
    assert!(table.status.success());
    let saved = fs::read(dir.path().join("table.txt")).unwrap();
    assert_eq!(table.stdout, saved);
    assert_eq!(out.stdout, saved);

    let csv = invbench(&["table", "--csv", records.to_str().unwrap()]);
    assert_eq!(csv.stdout, fs::read(dir.path().join("table.csv")).unwrap());

    let text = String::from_utf8(saved).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + 6);
    let header: Vec<&str> = rows[0].split_whitespace().collect();
    assert_eq!(header, ["ANDMask", "ERM", "IGA", "IRMv1", "Oracle"]);
    assert!(rows[1].starts_with("Example1.E0"));
    assert!(rows[6].starts_with("Example3s.E2"));
    assert!(rows[1].contains(" ± "));
}

#[test]
fn plot_data_has_one_row_per_problem_and_method() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(
        dir.path(),
        &[
            "--problem",
            "example2",
            "--method",
            "ERM,Oracle",
            "--reps",
            "2"
        ]
    )
    .status
    .success());
    let records = dir.path().join("records.csv");
    let out = invbench(&["plot-data", records.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn invalid_selectors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        &["--problem", "example9"][..],
        &["--method", "SGD"][..],
        &["--n-env", "1"][..],
        &["--trials", "0"][..],
    ] {
        let out = small_run(dir.path(), extra);
        assert!(!out.status.success(), "{extra:?} accepted");
    }
    assert!(!invbench(&["table", "/nonexistent/records.csv"])
        .status
        .success());
}

#[test]
fn sweep_rows_are_sorted_and_cover_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = invbench(&[
        "sweep",
        "--axis",
        "delta-spu",
        "--values",
        "5,0,2",
        "--problem",
        "example3,example2",
        "--method",
        "Oracle,ERM",
        "--reps",
        "2",
        "--n-per-env",
        "200",
        "--trials",
        "2",
        "--steps",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "axis_value,problem,algorithm,mean_error,spread,n"
    );
    let keys: Vec<(String, String, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].to_string(), f[0].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 3 * 2 * 2);
    for pair in keys.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!((&a.0, &a.1) < (&b.0, &b.1) || ((&a.0, &a.1) == (&b.0, &b.1) && a.2 < b.2));
    }
    assert!(keys.iter().any(|k| k.2 == 0.0));
    assert_eq!(out.stdout, text.as_bytes());
}

#[test]
fn selftest_passes() {
    let out = invbench(&["selftest"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
