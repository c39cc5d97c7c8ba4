use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_semshield");

fn semshield(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn semshield")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny checkpoints trained once through the CLI.
fn artifacts() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-artifacts");
        std::fs::create_dir_all(&dir).unwrap();
        let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
        let small = ["--set", "dataset.train=256", "--set", "dataset.test=64", "--set", "train.epochs=1"];
        let codec_set = format!("codec={}", p("codec.smsh"));
        let steps: [(&str, String, Vec<&str>); 3] = [
            ("train-codec", p("codec.smsh"), vec![]),
            ("train-denoiser", p("denoiser.smsh"), vec!["--set", &codec_set, "--set", "schedule.steps=20"]),
            ("train-eve", p("eve.smsh"), vec!["--set", &codec_set]),
        ];
        for (cmd, out, extra) in steps {
            let mut args = vec![cmd, "--out", &out];
            args.extend(small);
            args.extend(extra);
            let o = semshield(&args);
            assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
            assert!(stdout(&o).contains("seed: "), "{cmd} did not print its seed");
        }
        dir
    })
}

fn write_config(dir: &Path, scenario: &str, extra: &str) -> PathBuf {
    let a = artifacts();
    let cfg = format!(
        r#"{{"scenario": "{scenario}", "snr_db": [10], "seeds": [3], "eval_images": 32,
            "dataset": {{"kind": "synthetic", "train": 256, "test": 64, "seed": 2024}},
            "checkpoints": {{"codec": "{}", "denoiser": "{}", "eve": "{}"}}{extra}}}"#,
        a.join("codec.smsh").display(),
        a.join("denoiser.smsh").display(),
        a.join("eve.smsh").display()
    );
    let path = dir.join(format!("{scenario}.json"));
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn run_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eavesdrop_gaussian", r#", "an_power": [0, 0.5]"#);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = semshield(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        assert!(text.contains("seed: 3") && text.contains("\"scenario\": \"eavesdrop_gaussian\""));
        for f in ["metrics.csv", "metrics.meta.json", "summary.txt", "allocation.csv"] {
            assert!(out.join(f).is_file(), "missing {f}");
        }
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);

    let o = semshield(&["report", dir.path().join("a/metrics.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("eve_acc"), "{text}");
    assert!(text.contains("A4 "), "{text}");
}

#[test]
fn jamming_run_writes_all_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "jam_highpower", r#", "jammer": {"kind": "cw", "freq": 0.2, "phase": 0.0, "jsr_db": 30, "seed": 1}"#);
    let out = dir.path().join("out");
    let o = semshield(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    for arm in ["no_jamming", "undefended", "diffusion_only", "coarse_fine"] {
        assert!(csv.contains(&format!("jam_highpower:{arm}")), "missing {arm}");
    }
}

#[test]
fn missing_checkpoint_exits_4_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": "baseline", "snr_db": [10], "seeds": [1],
            "checkpoints": {"codec": "/nonexistent/c.smsh", "denoiser": "/nonexistent/d.smsh"}}"#,
    )
    .unwrap();
    let o = semshield(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("/nonexistent/c.smsh"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scenario": "baseline", "snr_db": ["#).unwrap();
    let o = semshield(&["run", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(o.status.code(), Some(3));

    std::fs::write(&cfg, r#"{"scenario": "eavesdrop_gaussian", "snr_db": [10], "seeds": [1],
        "checkpoints": {"codec": "c", "denoiser": "d"}}"#)
        .unwrap();
    let o = semshield(&["run", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(semshield(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(semshield(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(semshield(&["report"]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("codec.smsh");
    std::fs::write(&bad, b"SMSH\x01\x00\x00\x00garbage").unwrap();
    let o = semshield(&[
        "train-denoiser",
        "--out",
        dir.path().join("d.smsh").to_str().unwrap(),
        "--set",
        &format!("codec={}", bad.display()),
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}
