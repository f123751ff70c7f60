use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
[train]
epochs = 15
n_way = 4
k_sup = 3
k_qry = 2
tasks_per_batch = 2
[model]
g_hidden = 16
d_hidden = 16
ad_hidden = 8
ap_hidden = 8
embed_dim = 8
am_hidden = 8
[classifier]
softmax_hidden = 16
softmax_epochs = 3
[eval]
samples_zsl = 20
samples_gzsl = 20
sweep_sigmas = 1
[toy]
toy_per_class = 20
";

fn setup(dir: &Path) -> String {
    let text = format!(
        "[paths]\ndata = {}\nout = {}\n{SMALL}",
        dir.join("data").display(),
        dir.join("out").display()
    );
    let path = dir.join("small.conf");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn zsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsl")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = zsl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn summary_of(report: &str) -> String {
    report.lines().filter(|l| l.contains('=')).collect::<Vec<_>>().join("\n")
}

#[test]
fn toygen_train_eval_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    ok(&["toygen", "--config", &cfg]);
    for f in ["features.zslf", "labels.zsll", "attributes.zsla", "split.txt"] {
        assert!(tmp.path().join("data").join(f).is_file(), "{f}");
    }
    let train = ok(&["train", "--config", &cfg]);
    assert!(train.contains("epochs=15"));
    let report = ok(&["eval-zsl", "--config", &cfg]);
    let out = tmp.path().join("out");
    for f in ["checkpoint.zslc", "train.log", "config.resolved.txt", "eval-zsl.txt", "classifier.zsl.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 16);
    assert!(report.contains("unseen class 8 ") && report.contains("unseen class 9 "));
    let hash = report.lines().find_map(|l| l.strip_prefix("checkpoint_sha256=")).unwrap();
    assert!(train.contains(hash));
    assert_eq!(hash.len(), 64);
}

#[test]
fn every_evaluation_command_runs_after_training() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    ok(&["toygen", "--config", &cfg]);
    ok(&["train", "--config", &cfg]);
    let syn = ok(&["synthesize", "--config", &cfg]);
    assert!(syn.contains("rows=40"));
    let gzsl = ok(&["eval-gzsl", "--config", &cfg, "--gzsl-seen-mode", "real"]);
    assert!(gzsl.contains("seen_mode=real") && gzsl.contains("harmonic="));
    let ret = ok(&["retrieve", "--config", &cfg]);
    assert!(ret.contains("precision_at_5=") && ret.contains("precision_at_10="));
    let out = tmp.path().join("out");
    for f in ["synthetic.zslf", "synthetic.zsll", "synthetic.quality.zslf", "eval-gzsl.txt", "retrieve.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn sweep_emits_one_report_per_sample_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    ok(&["toygen", "--config", &cfg]);
    ok(&["train", "--config", &cfg]);
    let s = ok(&["sweep", "--config", &cfg]);
    let dir = tmp.path().join("out").join("sweep");
    let mut names: Vec<String> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["zsl-n100-sigma1.txt", "zsl-n200-sigma1.txt", "zsl-n25-sigma1.txt", "zsl-n50-sigma1.txt"]);
    for n in [25, 50, 100, 200] {
        assert!(s.contains(&format!("n{n}_sigma1=")));
    }
}

#[test]
fn eval_without_checkpoint_is_a_precondition_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    ok(&["toygen", "--config", &cfg]);
    let out = zsl(&["eval-zsl", "--config", &cfg]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"));
}

#[test]
fn bad_config_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.conf");
    fs::write(&path, "[train]\nn_way = banana\n").unwrap();
    let out = zsl(&["toygen", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_way") && err.contains("bad.conf:2"), "{err}");

    fs::write(&path, "nope = 1\n").unwrap();
    let out = zsl(&["toygen", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn flags_override_the_file_and_are_echoed() {
    let tmp = TempDir::new().unwrap();
    let cfg = setup(tmp.path());
    ok(&["toygen", "--config", &cfg, "--epochs", "3", "--seed", "11", "--classifier", "svm"]);
    let resolved = fs::read_to_string(tmp.path().join("out").join("config.resolved.txt")).unwrap();
    assert!(resolved.contains("epochs = 3"));
    assert!(resolved.contains("seed = 11"));
    assert!(resolved.contains("classifier = svm"));
    assert!(resolved.contains("k_sup = 3"));
}

#[test]
fn identical_runs_give_identical_summaries() {
    let run = || {
        let tmp = TempDir::new().unwrap();
        let cfg = setup(tmp.path());
        ok(&["toygen", "--config", &cfg]);
        let t = ok(&["train", "--config", &cfg]);
        let e = ok(&["eval-zsl", "--config", &cfg]);
        let g = ok(&["eval-gzsl", "--config", &cfg]);
        let text = fs::read_to_string(tmp.path().join("out").join("eval-zsl.txt")).unwrap();
        assert_eq!(text, e);
        (summary_of(&t), summary_of(&e), summary_of(&g))
    };
    assert_eq!(run(), run());
}

#[test]
fn gradcheck_passes() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("gc");
    let report = ok(&["gradcheck", "--out", out_dir.to_str().unwrap()]);
    assert!(report.contains("passed=true"), "{report}");
    assert!(out_dir.join("gradcheck.txt").is_file());
}
