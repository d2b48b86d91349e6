use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn e2ebt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_e2ebt"))
        .current_dir(dir)
        .env_remove("E2EBT_SEED")
        .args(args)
        .output()
        .expect("spawn e2ebt")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
checkpoint_every = 5
paths.data = "data"
paths.checkpoints = "ck"
paths.logs = "logs"
model.d_model = 16
model.heads = 2
model.d_ff = 32
model.enc_layers = 1
model.dec_layers = 1
model.max_positions = 80
pretrain.iters = 20
pretrain.batch = 8
bt.max_iters = 12
bt.log_every = 1
bt.batch_bilingual = 2
bt.batch_monolingual = 2
bt.warmup_iters = 10
bt.cache_load_prob = 0.5
data.bilingual = 40
data.mono = 60
data.test = 10
"#;

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.toml"), CONFIG).unwrap();
    ok(e2ebt(p, &["--config", "run.toml", "gen-data", "--out", "data"]));
    for side in ["src", "tgt"] {
        ok(e2ebt(p, &["--config", "run.toml", "pretrain-lm", "--side", side]));
    }
    ok(e2ebt(p, &["--config", "run.toml", "pretrain-nmt"]));
    dir
}

fn metrics(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn pipeline_resume_and_evaluate() {
    let dir = prepared();
    let p = dir.path();
    for f in ["data/vocab.txt", "data/train.src", "ck/lm.src.ckpt", "ck/lm.tgt.ckpt", "ck/nmt.ckpt"] {
        assert!(p.join(f).exists(), "{f} missing");
    }

    ok(e2ebt(p, &["--config", "run.toml", "train-bt", "--out", "ck/full.ckpt"]));
    fs::rename(p.join("logs/metrics.jsonl"), p.join("full.jsonl")).unwrap();
    let full = metrics(&p.join("full.jsonl"));
    assert_eq!(full.len(), 12);

    ok(e2ebt(p, &["--config", "run.toml", "train-bt", "--until", "7", "--out", "ck/half.ckpt"]));
    ok(e2ebt(p, &["--config", "run.toml", "train-bt", "--resume", "ck/half.ckpt", "--out", "ck/half.ckpt"]));
    assert_eq!(metrics(&p.join("logs/metrics.jsonl")), full);
    assert!(fs::read(p.join("ck/half.ckpt")).unwrap() == fs::read(p.join("ck/full.ckpt")).unwrap());

    let out = ok(e2ebt(p, &["--config", "run.toml", "evaluate", "--ckpt", "ck/full.ckpt", "--beam", "2"]));
    let scores: Vec<f64> = out
        .lines()
        .filter_map(|l| l.strip_prefix("BLEU "))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 2);
    assert!(scores.iter().all(|b| (0.0..=100.0).contains(b)));
}

#[test]
fn seed_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.toml"), CONFIG).unwrap();
    ok(e2ebt(p, &["--config", "run.toml", "gen-data", "--out", "data"]));
    let lm = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = format!("{name}.ckpt");
        let mut args = vec!["--config", "run.toml"];
        if let Some(s) = flag {
            args.extend(["--seed", s]);
        }
        args.extend(["pretrain-lm", "--side", "src", "--out", out.as_str()]);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_e2ebt"));
        cmd.current_dir(p).env_remove("E2EBT_SEED").args(&args);
        if let Some(v) = env {
            cmd.env("E2EBT_SEED", v);
        }
        ok(cmd.output().unwrap());
        fs::read(p.join(out)).unwrap()
    };
    let env5 = lm("a", Some("5"), None);
    assert_eq!(lm("b", Some("5"), None), env5);
    assert_ne!(lm("c", Some("6"), None), env5);
    assert_eq!(lm("d", Some("6"), Some("5")), env5);
    assert_eq!(lm("e", None, None), lm("f", Some("1"), None));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(e2ebt(dir.path(), &["gradcheck", "--points", "3"]));
    assert!(out.lines().count() > 20);
    assert!(!out.contains("FAIL"));
    let strict = e2ebt(dir.path(), &["gradcheck", "--points", "3", "--tol", "0"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn bench_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(e2ebt(
        dir.path(),
        &["bench", "--vocab", "100", "--len", "4", "--batch", "3", "--repeats", "1", "--out", "b.json"],
    ));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["softmax_counts"]["crt"], 12);
    assert_eq!(report["softmax_counts"]["gst"], 24);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(!e2ebt(p, &["frobnicate"]).status.success());
    assert!(!e2ebt(p, &["evaluate", "--ckpt", "missing.ckpt"]).status.success());
    fs::write(p.join("bad.toml"), "bt.lambda_z = 1\n").unwrap();
    let out = e2ebt(p, &["--config", "bad.toml", "gradcheck", "--points", "1"]);
    assert!(!out.status.success());
    assert!(!e2ebt(p, &["--set", "bt.lambda_x=-1", "gradcheck", "--points", "1"]).status.success());
}
