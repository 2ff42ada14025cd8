use std::process::Command;

fn astrodiff() -> Command {
    Command::new(env!("CARGO_BIN_EXE_astrodiff"))
}

const TINY: &str = r#"
[data]
size = 32
train_scenes = 2
eval_scenes = 1
cn2_grid = [5e-16, 3e-13]

[model]
widths = [4, 8]
time_dim = 8
timesteps = 6

[train_prior]
steps = 3
batch_size = 2
sample_every = 0

[train_restore]
steps = 3
batch_size = 2
sample_every = 0

[fuse]
iterations = 4
"#;

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    for verb in [&["gen-data"][..], &["train-prior"], &["train-restore"], &["restore", "--mode", "both"], &["eval"]] {
        let status = astrodiff()
            .args(verb)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "11", "--threads", "1"])
            .output()
            .unwrap();
        assert!(status.status.success(), "{verb:?}: {}", String::from_utf8_lossy(&status.stderr));
    }
    let summary = std::fs::read_to_string(out.join("eval/summary.csv")).unwrap();
    assert!(summary.starts_with("method,low_psnr,low_severity,medium_psnr,medium_severity,high_psnr,high_severity"));
    assert_eq!(summary.lines().count(), 4);
    let frozen = std::fs::read_to_string(out.join("eval/config.toml")).unwrap();
    assert!(frozen.contains("seed = 11"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\nthreads = 2\n").unwrap();
    let out = astrodiff().args(["show-config", "--seed", "9", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("threads = 2"), "{text}");
    let out = astrodiff().args(["show-config", "--preset", "paper"]).output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("steps = 50000"));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data]\nsize = 48\n").unwrap();
    let code = |args: &[&str]| astrodiff().args(args).output().unwrap().status.code();
    assert_eq!(code(&["gen-data", "--config", bad.to_str().unwrap()]), Some(1));
    assert_eq!(code(&["gen-data", "--config", dir.path().join("absent.toml").to_str().unwrap()]), Some(1));
    assert_eq!(code(&["no-such-verb"]), Some(1));
    assert_eq!(code(&["train-prior", "--out", dir.path().join("empty").to_str().unwrap()]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |verb: &str| {
        astrodiff().arg(verb).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap().status.code()
    };
    assert_eq!(run("gen-data"), Some(0));
    assert_eq!(run("train-prior"), Some(0));
    std::fs::write(out.join("prior/checkpoint.adck"), b"ADCK garbage").unwrap();
    assert_eq!(run("train-restore"), Some(0));
    assert_eq!(run("restore"), Some(2));
}
