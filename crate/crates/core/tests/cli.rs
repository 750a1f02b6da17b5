use std::path::Path;
use std::process::{Command, Output};

fn soap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SMALL: &[&str] = &[
    "--gen-n",
    "600",
    "--gen-d",
    "3",
    "--gen-ratio",
    "0.1",
    "--iters",
    "200",
    "--eval-every",
    "20",
];

fn with(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_args(verb: &str, extra: &[&str]) -> Output {
    let mut args = vec![verb.to_string()];
    args.extend(with(extra));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    soap(&refs)
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&soap(&[])), 2);
    assert_eq!(code(&soap(&["frobnicate"])), 2);
    assert_eq!(code(&soap(&["run", "--alpha", "fast"])), 2);
    assert_eq!(code(&soap(&["run", "--set", "nokey"])), 2);
    assert_eq!(code(&soap(&["run", "--split", "0.5,0.5,0.5"])), 2);
    assert_eq!(code(&run_args("sweep-batch", &["--sizes", ""])), 2);
    assert_eq!(
        code(&run_args(
            "run",
            &["--schedule", "theoretical", "--iters", "10"]
        )),
        2
    );
    assert_eq!(code(&soap(&["report", "/nonexistent/dir"])), 2);
    assert_eq!(code(&soap(&["--help"])), 0);
}

#[test]
fn all_seeds_failing_exits_1() {
    let out = run_args("run", &["--method", "ce", "--squash", "false"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run failed"));
}

#[test]
fn run_writes_artifacts_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run_args(
        "run",
        &["--seeds", "1,2", "--out-dir", out_dir.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "config.txt",
        "summary.csv",
        "aggregate.csv",
        "seed_1/curve.csv",
        "seed_2/pr_curve.csv",
        "seed_2/model.ckpt",
    ] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let report = soap(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("spearman="), "{text}");

    let single = soap(&["report", out_dir.join("seed_1/curve.csv").to_str().unwrap()]);
    assert_eq!(code(&single), 0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nmethod = ce\nseeds = 4\niters = 50\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run_args(
        "run",
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--method",
            "focal",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.contains("\nfocal,4,"), "{summary}");
    let written = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    // The file set iters = 50 but the command line later set 200.
    assert!(written.contains("iters = 200"));
}

#[test]
fn bad_config_line_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "iters = 10\nthis is not a pair\n").unwrap();
    let out = soap(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:2"));
}

#[test]
fn gen_data_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let out = soap(&[
        "gen-data",
        "--gen-n",
        "500",
        "--gen-d",
        "2",
        "--gen-ratio",
        "0.1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("f0,f1,label\n"));
    assert_eq!(text.lines().count(), 501);

    let run = soap(&["run", "--data-csv", csv.to_str().unwrap(), "--iters", "50"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));

    let bad = soap(&[
        "gen-data",
        "--data-csv",
        csv.to_str().unwrap(),
        "--out",
        "x.csv",
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn gradcheck_passes_for_each_surrogate() {
    for s in ["squared_hinge", "logistic", "sigmoid"] {
        let out = soap(&[
            "gradcheck",
            "--gen-n",
            "300",
            "--gen-d",
            "3",
            "--gen-ratio",
            "0.1",
            "--surrogate",
            s,
            "--arch",
            "mlp",
            "--hidden",
            "4",
        ]);
        assert_eq!(
            code(&out),
            0,
            "{s}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("rel_error="));
    }
    let strict = soap(&[
        "gradcheck",
        "--gen-n",
        "300",
        "--gen-d",
        "3",
        "--gen-ratio",
        "0.1",
        "--tol",
        "0",
    ]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run_args(
        "sweep-batch",
        &[
            "--sizes",
            "8,32",
            "--seeds",
            "0,1",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(table.starts_with("batch_size,seed,test_ap\n"));
    assert_eq!(table.lines().count(), 5);
    assert!(Path::new(&out_dir.join("batch_8/summary.csv")).is_file());
}
