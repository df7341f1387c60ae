//! End-to-end checks of the command-line binary: artifact layout,
//! reproducibility, override precedence, sweep aggregation, standalone
//! evaluation and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_darl"));
    // Keep runs hermetic regardless of the harness environment.
    c.env_remove("DARL_THREADS");
    c
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary failed to start");
    assert!(
        out.status.success(),
        "exit {:?} for {args:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str], expected_code: i32) -> String {
    let out = bin().args(args).output().expect("binary failed to start");
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        out.status.code(),
        Some(expected_code),
        "args {args:?}\nstderr: {stderr}"
    );
    stderr
}

/// One tiny world shared by every test, plus a config file sized for speed.
fn fixture() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static FIXTURE: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let world = dir.path().join("world");
        run_ok(&[
            "world",
            "--seed",
            "5",
            "--domains",
            "2",
            "--k",
            "2",
            "--sentences",
            "40",
            "--min-len",
            "4",
            "--max-len",
            "8",
            "--out",
            world.to_str().unwrap(),
        ]);
        let config = dir.path().join("tiny.cfg");
        fs::write(
            &config,
            "pretrain_epochs=2\nadapt_steps=4\neval_samples=24\nn_rollouts=2\nt_max=8\n\
             d_e=8\nd_h=8\nd_c=6\ndisc_pretrain_episodes=20\nbatch_size_mle=8\n",
        )
        .unwrap();
        (dir, world, config)
    })
}

fn world_arg() -> String {
    fixture().1.to_str().unwrap().to_string()
}

fn config_arg() -> String {
    fixture().2.to_str().unwrap().to_string()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// runlog.csv minus its wall-clock column, which is legitimately
/// nondeterministic.
fn runlog_without_seconds(dir: &Path) -> Vec<String> {
    read(&dir.join("runlog.csv"))
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

/// metrics.csv data row split into fields; the first is the run id.
fn metrics_fields(dir: &Path) -> Vec<String> {
    let text = read(&dir.join("metrics.csv"));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,seed,R,k,bleu,self_bleu,similarity,sales,cost,tax,gross_acc,net_acc"
    );
    let row: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    assert!(lines.next().is_none(), "expected exactly one data row");
    row
}

#[test]
fn world_layout_matches_the_contract_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "world", "--seed", "9", "--domains", "5", "--k", "5", "--sentences", "30", "--out",
            out.to_str().unwrap(),
        ]);
    }
    let corpus_files: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("corpus_"))
        .collect();
    assert_eq!(corpus_files.len(), 5, "one corpus file per source domain");
    for name in ["world.txt", "grammar.txt", "vocab.txt", "target_pool.txt", "support.txt"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
    assert_eq!(read(&a.join("support.txt")).lines().count(), 5);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?} differs across identical invocations"
        );
    }
}

#[test]
fn world_supports_ten_shot_and_rejects_oversized_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w10");
    run_ok(&[
        "world", "--seed", "1", "--domains", "2", "--k", "10", "--sentences", "25", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(read(&out.join("support.txt")).lines().count(), 10);

    let bad = dir.path().join("bad");
    let stderr = run_err(
        &["world", "--seed", "1", "--domains", "2", "--k", "50", "--sentences", "10", "--out",
          bad.to_str().unwrap()],
        1,
    );
    assert!(stderr.contains("k"), "error should name the offending parameter: {stderr}");
}

#[test]
fn run_is_reproducible_from_flags_and_from_its_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "run",
        "--config",
        &config_arg(),
        "--world",
        &world_arg(),
        "--R",
        "0.5",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    let stdout_a = String::from_utf8(run_ok(&args).stdout).unwrap();
    let metrics_a = fs::read(out.join("metrics.csv")).unwrap();
    let samples_a = fs::read(out.join("samples.txt")).unwrap();
    let runlog_a = runlog_without_seconds(&out);
    for name in ["config.txt", "gen.ckpt", "disc.ckpt"] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    // Identical invocation: byte-identical artifacts (runlog modulo time).
    let stdout_b = String::from_utf8(run_ok(&args).stdout).unwrap();
    assert_eq!(stdout_a, stdout_b);
    assert_eq!(metrics_a, fs::read(out.join("metrics.csv")).unwrap());
    assert_eq!(samples_a, fs::read(out.join("samples.txt")).unwrap());
    assert_eq!(runlog_a, runlog_without_seconds(&out));

    // The echoed config alone reproduces the run in a fresh directory.
    let config_echo = read(&out.join("config.txt"));
    assert!(config_echo.contains("r=0.5\n"), "echo must state the effective R:\n{config_echo}");
    assert!(config_echo.contains("seed=3\n"));
    assert!(config_echo.contains("world="), "echo must record the world location");
    let replay = dir.path().join("replay");
    run_ok(&[
        "run",
        "--config",
        out.join("config.txt").to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    assert_eq!(samples_a, fs::read(replay.join("samples.txt")).unwrap());
    assert_eq!(metrics_fields(&out)[1..], metrics_fields(&replay)[1..], "metrics differ");
}

#[test]
fn flag_overrides_beat_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("r0.cfg");
    fs::write(&config, format!("r=0\n{}", read(Path::new(&config_arg())))).unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--world",
        &world_arg(),
        "--R",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let echo = read(&out.join("config.txt"));
    assert!(echo.contains("r=1\n"), "flag value must win:\n{echo}");
    let runlog = read(&out.join("runlog.csv"));
    assert!(!runlog.contains(",MLE,"), "R=1 must not take MLE branches");
}

#[test]
fn sweep_emits_sorted_cells_and_per_rate_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    run_ok(&[
        "sweep",
        "--config",
        &config_arg(),
        "--world",
        &world_arg(),
        "--R-list",
        "1,0",
        "--seeds",
        "2",
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = read(&out.join("sweep.csv"));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + 4 + 2, "header, 4 cells, 2 means");
    let ids: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["R0_s11", "R0_s12", "R1_s11", "R1_s12", "mean_R0", "mean_R1"]);
    for id in &ids[..4] {
        assert!(out.join(id).join("metrics.csv").exists(), "cell {id} lacks artifacts");
    }
    // Mean rows average the numeric fields of their cells.
    let field = |row: &str, i: usize| row.split(',').nth(i).unwrap().parse::<f64>().unwrap();
    for (mean_row, first, second) in [(rows[5], rows[1], rows[2]), (rows[6], rows[3], rows[4])] {
        for i in 4..12 {
            let want = (field(first, i) + field(second, i)) / 2.0;
            assert!((field(mean_row, i) - want).abs() < 1e-12, "column {i} of {mean_row}");
        }
    }
}

#[test]
fn single_cell_sweep_matches_a_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_out = dir.path().join("sweep");
    let run_out = dir.path().join("run");
    run_ok(&[
        "sweep", "--config", &config_arg(), "--world", &world_arg(), "--R-list", "0.5",
        "--seeds", "1", "--seed", "4", "--out", sweep_out.to_str().unwrap(),
    ]);
    run_ok(&[
        "run", "--config", &config_arg(), "--world", &world_arg(), "--R", "0.5", "--seed", "4",
        "--out", run_out.to_str().unwrap(),
    ]);
    let text = read(&sweep_out.join("sweep.csv"));
    let cell: Vec<String> = text.lines().nth(1).unwrap().split(',').map(str::to_string).collect();
    assert_eq!(cell[1..], metrics_fields(&run_out)[1..], "degenerate sweep must equal cmd_run");
}

#[test]
fn eval_flags_support_copying_and_validates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let support = fixture().1.join("support.txt");
    let copied = dir.path().join("copied.txt");
    fs::write(&copied, read(&support).repeat(50)).unwrap();
    let out = dir.path().join("eval");
    run_ok(&[
        "eval", "--samples", copied.to_str().unwrap(), "--world", &world_arg(), "--out",
        out.to_str().unwrap(),
    ]);
    let fields = metrics_fields(&out);
    assert_eq!(fields[1], "", "seed is not applicable to eval");
    assert_eq!(fields[2], "", "R is not applicable to eval");
    let similarity: f64 = fields[6].parse().unwrap();
    let gross: f64 = fields[10].parse().unwrap();
    let net: f64 = fields[11].parse().unwrap();
    assert_eq!(similarity, 1.0, "support copies must be flagged as maximal similarity");
    assert!(net < gross - 0.5, "duplicate tax must separate net from gross");

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let stderr = run_err(
        &["eval", "--samples", empty.to_str().unwrap(), "--world", &world_arg(), "--out",
          dir.path().join("e2").to_str().unwrap()],
        1,
    );
    assert!(stderr.contains("no sentences"), "unexpected stderr: {stderr}");
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");

    // Unknown config key.
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "warp_speed=9\n").unwrap();
    run_err(
        &["run", "--config", bad_cfg.to_str().unwrap(), "--world", &world_arg(), "--out",
          out.to_str().unwrap()],
        1,
    );

    // No world anywhere.
    let stderr = run_err(&["run", "--out", out.to_str().unwrap()], 1);
    assert!(stderr.contains("world"), "unexpected stderr: {stderr}");

    // Invalid rate.
    run_err(
        &["run", "--world", &world_arg(), "--R", "1.5", "--out", out.to_str().unwrap()],
        1,
    );

    // Unknown flag and missing flag value are also usage errors, not clap's 2.
    run_err(&["run", "--world", &world_arg(), "--out"], 1);
    run_err(&["frobnicate"], 1);
    assert!(!out.exists(), "failed runs must not leave artifacts");

    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("sweep"));
}

#[test]
fn numeric_divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diverge");
    let stderr = run_err(
        &[
            "run", "--config", &config_arg(), "--world", &world_arg(), "--R", "0",
            "--disc-lr", "1e300", "--adapt-steps", "2", "--out", out.to_str().unwrap(),
        ],
        2,
    );
    assert!(
        stderr.contains("finite") || stderr.contains("diverged"),
        "diagnostic should name the numeric failure: {stderr}"
    );
    assert!(!out.exists(), "diverged runs must clean up their artifacts");
}

#[cfg(feature = "parallel")]
#[test]
fn thread_cap_changes_nothing_but_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("t1");
    let four = dir.path().join("t4");
    for (threads, out) in [("1", &one), ("4", &four)] {
        let output = bin()
            .env("DARL_THREADS", threads)
            .args([
                "run", "--config", &config_arg(), "--world", &world_arg(), "--R", "0.5",
                "--seed", "8", "--out", out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(output.status.success());
    }
    assert_eq!(
        fs::read(one.join("samples.txt")).unwrap(),
        fs::read(four.join("samples.txt")).unwrap()
    );
    assert_eq!(metrics_fields(&one)[1..], metrics_fields(&four)[1..]);
    assert_eq!(
        fs::read(one.join("gen.ckpt")).unwrap(),
        fs::read(four.join("gen.ckpt")).unwrap()
    );

    let output = bin().env("DARL_THREADS", "zero").args(["world", "--out", "x"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1), "malformed thread cap must be a usage error");
}
