//! End-to-end checks of the `keypose` binary: stage subcommands chain
//! through files, exit codes signal failure, and the full `run` command
//! produces a report.

use std::fs;
use std::path::Path;
use std::process::Command;

fn keypose() -> Command {
    Command::new(env!("CARGO_BIN_EXE_keypose"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("desk.toml");
    fs::write(
        &path,
        "seed = 21\n\n\
         [extract]\nthreshold_mm = 20.0\n\n\
         [cluster]\nk = 10\n\n\
         [net]\nhidden_size = 16\n\n\
         [train]\nlr = 0.001\nbatch_size = 16\nepochs = 3\n\n\
         [predict]\nn_samples = 3\nhorizon_s = 2.0\n",
    )
    .unwrap();
    path
}

#[test]
fn stage_subcommands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let tracks = dir.path().join("tracks");
    let kpc = dir.path().join("model.kpc");
    let kpn = dir.path().join("model.kpn");
    let forecasts = dir.path().join("forecasts");

    let run = |args: &[&str]| {
        let out = keypose()
            .args(["--config", cfg.to_str().unwrap()])
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "command {:?} failed:\n{}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };

    run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n-actions",
        "2",
        "--seqs-per-action",
        "3",
        "--frames",
        "200",
        "--joints",
        "2",
    ]);
    assert!(data.join("train.txt").exists());

    run(&[
        "extract",
        "--in",
        data.to_str().unwrap(),
        "--out",
        tracks.to_str().unwrap(),
    ]);
    assert!(tracks.join("train.txt").exists());
    assert!(tracks.join("seq_a0_000.jsonl").exists());

    run(&[
        "cluster",
        "--in",
        tracks.to_str().unwrap(),
        "--out",
        kpc.to_str().unwrap(),
    ]);
    assert!(fs::read_to_string(&kpc)
        .unwrap()
        .starts_with("KPCLUSTER v1"));

    run(&[
        "train",
        "--data",
        tracks.to_str().unwrap(),
        "--clusters",
        kpc.to_str().unwrap(),
        "--out",
        kpn.to_str().unwrap(),
    ]);
    assert!(fs::read_to_string(&kpn).unwrap().starts_with("KPNET v1"));

    // forecast the past of a held-out sequence
    let observed = dir.path().join("observed.csv");
    let full = fs::read_to_string(data.join("seq_a0_002.csv")).unwrap();
    let past: String = full
        .lines()
        .take(1 + 150)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&observed, past).unwrap();

    run(&[
        "predict",
        "--model",
        kpn.to_str().unwrap(),
        "--clusters",
        kpc.to_str().unwrap(),
        "--in",
        observed.to_str().unwrap(),
        "--mode",
        "sample",
        "--n",
        "3",
        "--temp",
        "0.3",
        "--out",
        forecasts.to_str().unwrap(),
    ]);
    assert!(forecasts.join("sample_000.csv").exists());
    assert!(forecasts.join("sample_002.json").exists());

    // score the samples against the real future (last 50 frames; the
    // evaluate command re-reads frame counts from the files themselves)
    let gt = dir.path().join("gt_future.csv");
    let header = full.lines().next().unwrap();
    let tail: String = std::iter::once(header.to_string())
        .chain(full.lines().skip(1 + 150).map(String::from))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&gt, tail).unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--gt",
        gt.to_str().unwrap(),
        "--pred",
        forecasts.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pskl"), "summary missing: {stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["diversity"].as_f64().unwrap().is_finite());
}

#[test]
fn run_command_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let out_dir = dir.path().join("out");

    let status = keypose()
        .args(["--config", cfg.to_str().unwrap()])
        .args([
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--n-actions",
            "2",
            "--seqs-per-action",
            "3",
            "--frames",
            "200",
            "--joints",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let out = keypose()
        .args(["--config", cfg.to_str().unwrap()])
        .args([
            "run",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("model.kpn").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mpjpe"), "summary missing: {stdout}");
}

#[test]
fn failures_exit_nonzero_with_stderr() {
    // missing dataset directory
    let out = keypose()
        .args([
            "run",
            "--data",
            "/nonexistent-dir",
            "--out",
            "/tmp/keypose-x",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    // malformed config
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[cluster]\nk = \"many\"\n").unwrap();
    let out = keypose()
        .args(["--config", bad.to_str().unwrap()])
        .args(["synth", "--out", dir.path().join("d").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");

    // unknown mode on predict
    let out = keypose()
        .args([
            "predict",
            "--model",
            "/nope.kpn",
            "--clusters",
            "/nope.kpc",
            "--in",
            "/nope.csv",
            "--mode",
            "psychic",
            "--out",
            "/tmp/keypose-y",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
