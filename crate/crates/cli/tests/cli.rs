use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use muvfs_cli::commands::init_model;
use muvfs_cli::RunConfig;
use muvfs_core::streams::TwoStream;

const SMALL: &str = "\
seed = 5
[data]
appearance_classes = 4
motion_classes = 4
videos_per_class = 4
frames = 16
height = 16
width = 16
[sampling]
appearance = 4x1
action = 2x2
appearance_res = 8
action_res = 4
[model]
hidden = 16
embed_dim = 8
proj_hidden = 16
proj_dim = 8
[pretrain]
epochs = 2
batch_size = 16
warmup_epochs = 1
[head]
d_k = 4
d_v = 8
[mining]
n = 8
batch = 16
[meta]
iterations = 4
episodes_per_iter = 2
[eval]
episodes = 12
finetune_epochs = 3
ways = 2,3,5
[gradcheck]
seeds = 1
";

fn muvfs(args: &[&str], dir: &Path, env: &[(&str, &str)]) -> Output {
    let cfg = dir.join("small.cfg");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_muvfs"));
    cmd.arg("--config")
        .arg(&cfg)
        .args(args)
        .env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file below `dir` except the timestamp sidecars, with contents.
fn primary_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_writes_manifest_and_videos_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&muvfs(
        &["--out", a.to_str().unwrap(), "generate"],
        tmp.path(),
        &[],
    ));
    ok(&muvfs(
        &["--out", b.to_str().unwrap(), "generate"],
        tmp.path(),
        &[],
    ));
    let files = primary_files(&a.join("dataset"));
    assert!(files.iter().any(|(p, _)| p == Path::new("manifest.json")));
    let videos = files
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "muvt"))
        .count();
    assert_eq!(videos, 4 * 4 * 4);
    assert_eq!(files, primary_files(&b.join("dataset")));
    assert!(a.join("dataset/run.json").exists());
    let cfg = fs::read_to_string(a.join("dataset/config.txt")).unwrap();
    assert!(cfg.starts_with("# config_digest = "));
}

#[test]
fn missing_parent_is_an_io_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("no/such/parent");
    let o = muvfs(
        &["--out", out.to_str().unwrap(), "generate"],
        tmp.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(out.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    for bad in ["meta.gamma=1", "eval.learner=knn", "data.frames=many"] {
        let o = muvfs(&["--out", out, "--set", bad, "generate"], tmp.path(), &[]);
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", stderr(&o));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_muvfs"))
        .args(["--config", "/nonexistent/x.cfg", "--out", out, "generate"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent/x.cfg"));
}

#[test]
fn zero_epochs_keeps_the_initialisation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    ok(&muvfs(&["--out", o, "generate"], tmp.path(), &[]));
    let zero = [
        "--set",
        "pretrain.epochs=0",
        "--set",
        "pretrain.warmup_epochs=0",
    ];
    ok(&muvfs(
        &[&["--out", o][..], &zero, &["pretrain"]].concat(),
        tmp.path(),
        &[],
    ));
    let saved = TwoStream::load(&out.join("pretrain/checkpoint")).unwrap();
    let mut cfg = RunConfig::parse(SMALL).unwrap();
    cfg.set("pretrain.epochs", "0").unwrap();
    let fresh = init_model(&cfg).unwrap();
    assert_eq!(saved.named_params(), fresh.named_params());
    let log = fs::read_to_string(out.join("pretrain/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn pretrain_log_has_one_row_per_epoch_and_optional_joint_column() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    ok(&muvfs(&["--out", o, "generate"], tmp.path(), &[]));
    ok(&muvfs(&["--out", o, "pretrain"], tmp.path(), &[]));
    let log = fs::read_to_string(out.join("pretrain/log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);
    assert!(!log.lines().next().unwrap().contains("loss_joint"));
    ok(&muvfs(
        &["--out", o, "--set", "pretrain.joint_loss=true", "pretrain"],
        tmp.path(),
        &[],
    ));
    let log = fs::read_to_string(out.join("pretrain/log.csv")).unwrap();
    assert!(log.lines().next().unwrap().contains("loss_joint"));
}

#[test]
fn full_pipeline_is_deterministic_and_reports_each_way() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = out.to_str().unwrap();
        let env = [("MUVFS_THREADS", threads)];
        for cmd in ["generate", "pretrain", "metatrain", "evaluate"] {
            ok(&muvfs(&["--out", o, cmd], tmp.path(), &env));
        }
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert_eq!(primary_files(&a), primary_files(&b));

    let csv = fs::read_to_string(a.join("eval/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("eval/report.json")).unwrap()).unwrap();
    let digest = json[0]["config_digest"].as_str().unwrap();
    assert!(rows.iter().all(|r| r.ends_with(digest)));
    let meta_log = fs::read_to_string(a.join("meta/log.csv")).unwrap();
    assert_eq!(meta_log.lines().count(), 1 + 4);

    let o = muvfs(
        &[
            "--out",
            a.to_str().unwrap(),
            "--set",
            "eval.learner=protonet",
            "--set",
            "eval.finetune_epochs=7",
            "evaluate",
        ],
        tmp.path(),
        &[],
    );
    ok(&o);
    assert!(stderr(&o).contains("warning: eval.finetune_epochs is ignored by learner protonet"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().next().unwrap();
    let summary = line.rsplit(": ").next().unwrap();
    let (mean, hw) = summary.split_once(" ± ").unwrap();
    for part in [mean, hw] {
        let (_, frac) = part.split_once('.').unwrap();
        assert_eq!(frac.len(), 2, "{line}");
    }
}

#[test]
fn evaluate_rejects_a_head_from_another_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    for cmd in ["generate", "pretrain", "metatrain"] {
        ok(&muvfs(&["--out", o, cmd], tmp.path(), &[]));
    }
    let r = muvfs(
        &["--out", o, "--set", "ablation=action-only", "evaluate"],
        tmp.path(),
        &[],
    );
    assert_eq!(r.status.code(), Some(2), "{}", stderr(&r));
    let r = muvfs(
        &["--out", o, "evaluate"],
        tmp.path(),
        &[("MUVFS_THREADS", "zero")],
    );
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_names_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    let good = muvfs(&["--out", o, "gradcheck"], tmp.path(), &[]);
    ok(&good);
    let text = String::from_utf8_lossy(&good.stdout);
    assert!(text.lines().count() > 10);
    assert!(text
        .lines()
        .all(|l| l.starts_with("PASS ") && l.contains("max_rel_err=")));

    let bad = muvfs(
        &[
            "--out",
            o,
            "--set",
            "gradcheck.inject_fault=softmax",
            "gradcheck",
        ],
        tmp.path(),
        &[],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("softmax"));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL softmax"));

    let unknown = muvfs(
        &["--out", o, "--set", "gradcheck.only=nope", "gradcheck"],
        tmp.path(),
        &[],
    );
    assert_eq!(unknown.status.code(), Some(2));
}
