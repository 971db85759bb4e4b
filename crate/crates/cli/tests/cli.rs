use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use nalgebra::DVector;
use prden::channel::dataset::{Dataset, DatasetFlags, Sample};
use prden::denoiser::WeightFile;
use prden::{MeasurementOperator, RunConfig};

fn prden(args: &[&str]) -> Output {
    prden_env(args, None)
}

fn prden_env(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prden"));
    cmd.args(args).env_remove("PRDN_THREADS");
    if let Some(t) = threads {
        cmd.env("PRDN_THREADS", t);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["generate", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = prden(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn desk_dataset_round_trips_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "100", "--seed", "3"]);
    assert_eq!(Dataset::read(&ds).unwrap().len(), 100);
    let csv = dir.path().join("e.csv");
    let o = prden(&["estimate", "-d", s(&ds), "-a", "lmmse", "-o", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.starts_with("index,nmse_db,iterations,converged\n"));
}

#[test]
fn same_seed_same_bytes_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.prdn");
    let b = dir.path().join("b.prdn");
    let c = dir.path().join("c.prdn");
    for (path, threads) in [(&a, "1"), (&b, "1"), (&c, "6")] {
        let o = prden_env(
            &[
                "generate",
                "--out",
                s(path),
                "--n-samples",
                "30",
                "--seed",
                "7",
            ],
            Some(threads),
        );
        assert_eq!(code(&o), 0);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes, std::fs::read(&c).unwrap());
    let d = gen(dir.path(), "d.prdn", &["--n-samples", "30", "--seed", "8"]);
    assert_ne!(bytes, std::fs::read(d).unwrap());
}

#[test]
fn invalid_antenna_count_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = prden(&[
        "generate",
        "--out",
        s(&dir.path().join("x.prdn")),
        "--antennas",
        "48",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("geometry.n_antennas"), "{}", stderr(&o));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn ls_recovers_noiseless_square_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[geometry]\nn_antennas = 16\n[pilot]\np_slots = 4\nn_rf = 4\n",
    );
    let ds = gen(
        dir.path(),
        "sq.prdn",
        &["--config", s(&cfg), "--noiseless", "--n-samples", "10"],
    );
    let csv = dir.path().join("ls.csv");
    let o = prden(&[
        "--config",
        s(&cfg),
        "estimate",
        "-d",
        s(&ds),
        "-a",
        "ls",
        "-o",
        s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for line in std::fs::read_to_string(&csv).unwrap().lines().skip(1) {
        let nmse: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(nmse <= -120.0, "{line}");
    }
}

#[test]
fn pr_reports_converged_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "10"]);
    let o = prden(&["estimate", "-d", s(&ds), "-a", "pr", "--lambda", "0.01"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("converged: 10/10"), "{}", stdout(&o));
}

#[test]
fn estimator_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "2"]);
    let o = prden(&["estimate", "-d", s(&ds), "-a", "pr-den"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--weights"), "{}", stderr(&o));
    let o = prden(&["estimate", "-d", s(&ds), "-a", "admm"]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("ls, lmmse, ista, fista, pr, pr-den"),
        "{}",
        stderr(&o)
    );
    let o = prden(&[
        "estimate",
        "-d",
        s(&dir.path().join("missing.prdn")),
        "-a",
        "ls",
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn pr_den_runs_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "3"]);
    let w = dir.path().join("w.prdw");
    WeightFile::random(64, 1.0, 4, 0.05).write(&w).unwrap();
    let o = prden(&[
        "estimate",
        "-d",
        s(&ds),
        "-a",
        "pr-den",
        "--weights",
        s(&w),
        "--max-iter",
        "30",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let small = dir.path().join("w16.prdw");
    WeightFile::random(16, 1.0, 4, 0.05).write(&small).unwrap();
    let o = prden(&[
        "estimate",
        "-d",
        s(&ds),
        "-a",
        "pr-den",
        "--weights",
        s(&small),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("weights"), "{}", stderr(&o));
}

#[test]
fn benchmark_rows_curves_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "50", "--seed", "2"]);
    let run = |threads: &str, tag: &str| {
        let out = dir.path().join(format!("b{tag}.csv"));
        let curves = dir.path().join(format!("c{tag}.csv"));
        let o = prden_env(
            &[
                "benchmark",
                "-d",
                s(&ds),
                "-a",
                "ls,pr",
                "--snrs",
                "0,10,20",
                "-o",
                s(&out),
                "--curves",
                s(&curves),
                "--curve-iters",
                "15",
            ],
            Some(threads),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (
            std::fs::read_to_string(out).unwrap(),
            std::fs::read_to_string(curves).unwrap(),
        )
    };
    let (report, curves) = run("1", "1");
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(
        lines[0],
        "algorithm,snr_db,n_samples,nmse_db_mean,nmse_db_std,iters_mean,time_ms_median"
    );
    assert_eq!(lines.len(), 7);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("50")));
    // pr only; ls has no iterations
    assert_eq!(curves.lines().count(), 16);
    assert_eq!((report.clone(), curves.clone()), run("5", "5"));
}

#[test]
fn benchmark_fails_on_non_finite_nmse() {
    // a one-antenna identity system measured without noise: LS is exact
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset {
        flags: DatasetFlags {
            normalized: false,
            angular: false,
            noiseless: true,
        },
        op: Arc::new(MeasurementOperator::identity(1)),
        samples: vec![Sample {
            h: DVector::from_vec(vec![1.0, 0.0]),
            y: DVector::from_vec(vec![1.0, 0.0]),
            snr_db: f64::INFINITY,
        }],
    };
    let path = dir.path().join("exact.prdn");
    ds.write(&path).unwrap();
    let cfg = write_config(
        dir.path(),
        "[geometry]\nn_antennas = 1\nn_upas = 1\n[pilot]\np_slots = 1\nn_rf = 1\n",
    );
    let out = dir.path().join("b.csv");
    let o = prden(&[
        "--config",
        s(&cfg),
        "benchmark",
        "-d",
        s(&path),
        "-a",
        "ls",
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 3, "{}{}", stdout(&o), stderr(&o));
    assert!(std::fs::read_to_string(out).unwrap().contains("-inf"));
}

#[test]
fn selftest_passes_and_hook_fails() {
    let o = prden(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 5);
    let o = prden(&[
        "selftest",
        "--iters",
        "200",
        "--instances",
        "1",
        "--pairs",
        "50",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = prden(&[
        "selftest",
        "--tolerance-scale",
        "0",
        "--instances",
        "1",
        "--pairs",
        "10",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn inspect_prints_headers() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "d.prdn", &["--n-samples", "4", "--spatial"]);
    let o = prden(&["inspect", s(&ds)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(
        text.contains("antennas (N): 64")
            && text.contains("samples: 4")
            && text.contains("angular=false"),
        "{text}"
    );

    let w = dir.path().join("w.prdw");
    WeightFile::random(16, 0.5, 1, 0.1).write(&w).unwrap();
    let o = prden(&["inspect", s(&w)]);
    assert_eq!(code(&o), 0);
    assert!(
        stdout(&o).contains("tensor head.w: [64, 2, 3, 3]"),
        "{}",
        stdout(&o)
    );

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"hello").unwrap();
    assert_eq!(code(&prden(&["inspect", s(&junk)])), 2);
}

#[test]
fn config_echo_is_canonical_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n[solver]\nsigma = 0.5\n");
    let o = prden(&["--config", s(&cfg), "--seed", "9", "config"]);
    assert_eq!(code(&o), 0);
    let echo = stdout(&o);
    let parsed = RunConfig::from_toml(&echo).unwrap();
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.solver.sigma, 0.5);
    assert_eq!(parsed.to_toml(), echo);
    let bad = write_config(dir.path(), "[solver]\nsigmaa = 1\n");
    assert_eq!(code(&prden(&["--config", s(&bad), "config"])), 2);
}
