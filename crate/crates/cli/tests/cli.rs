use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn semcast(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semcast"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("SEMCAST_THREADS");
    if let Some(t) = threads {
        cmd.env("SEMCAST_THREADS", t);
    }
    cmd.output().expect("spawn semcast")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_dir() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist-subset")
        .display()
        .to_string()
}

/// A few seconds of training on a slice of the MNIST subset.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    let text = format!(
        r#"profile = "desk"
seed = 3

[data]
data_dir = "{}"
train_limit = 256
test_limit = 64

[model]
bits = 16
latent = 16
encoder_hidden = 32
critic_hidden = 8
rec_hidden = 32
cls_hidden = 8

[schedule]
epochs = 2
iters_per_epoch = 2
kappa = 2
inner_steps = 2
batch_size = 32
lr_inner = 0.001
eta = 0.001
eval_snrs = "inf,0"
"#,
        data_dir()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = semcast(&["frobnicate"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_key_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = semcast(&["qp-selftest", "--set", "no_such_key=1", "--out", out], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("no_such_key"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn missing_config_file_is_an_error() {
    let o = semcast(&["train", "--config", "/nonexistent/desk.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn bad_thread_env_is_an_error() {
    let o = semcast(&["qp-selftest", "--instances", "1", "--kkt-instances", "1"], Some("many"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("SEMCAST_THREADS"));
}

#[test]
fn qp_selftest_reports_all_matches() {
    let o = semcast(&["qp-selftest"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("100/100 oracle matches"), "{}", stdout(&o));
    assert!(stdout(&o).contains("KKT 1000/1000"), "{}", stdout(&o));
}

#[test]
fn gradcheck_passes() {
    let o = semcast(&["gradcheck", "--instances", "3"], None);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(stdout(&o).lines().count() >= 4);
}

#[test]
fn synth_trilevel_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = semcast(&["synth-trilevel", "--out", out], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("synth.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iter,upper,psi,g_tilde,lambda"));
    assert_eq!(csv.lines().count(), 401);
    assert!(stdout(&o).contains("min psi over first 400"));
}

#[test]
fn train_is_reproducible_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let config = config.to_str().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = semcast(
            &["train", "--config", config, "--set", "seed=7", "--out", out.to_str().unwrap()],
            Some(threads),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    let trace = |d: &Path| fs::read(d.join("trace.csv")).unwrap();
    assert_eq!(trace(&a), trace(&b));
    assert_eq!(trace(&a), trace(&c));
    assert_eq!(String::from_utf8(trace(&a)).unwrap().lines().count(), 1 + 4);

    let dump = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(dump.contains("seed = \"7\""), "{dump}");
    assert!(dump.contains("bits = \"16\""), "{dump}");
    assert!(a.join("checkpoints/epoch-002/encoder.bin").is_file());

    let o = semcast(&["eval", "--out", a.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = fs::read_to_string(a.join("eval.csv")).unwrap();
    let lines: Vec<_> = eval.lines().collect();
    assert_eq!(lines[0], "snr_db,receiver,task,ssim,psnr,accuracy");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("inf,1,reconstruction,"));
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = semcast(&["eval", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no checkpoint"));
}
