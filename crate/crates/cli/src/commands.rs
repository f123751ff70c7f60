use std::fs;
use std::path::{Path, PathBuf};

use zsl_core::config::Config;
use zsl_core::data::{make_toy_dataset, Dataset};
use zsl_core::eval::{
    evaluate_gzsl, evaluate_zsl, percent, render_per_class, render_retrieval, retrieval_eval, RetrievalConfig, Summary,
    SynthesisConfig,
};
use zsl_core::meta::{EpochLog, Trainer};
use zsl_core::networks::check::{check_composite, small_architecture, Composite};
use zsl_core::networks::{Checkpoint, ModelState};
use zsl_core::synthesis::softmax::check_weighted_loss;
use zsl_core::synthesis::{save_classifier, synthesize};
use zsl_core::{Error, Result};

pub const CHECKPOINT: &str = "checkpoint.zslc";

pub fn run(command: &str, cfg: &Config) -> Result<String> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write(&cfg.out.join("config.resolved.txt"), &cfg.serialize())?;
    match command {
        "toygen" => toygen(cfg),
        "train" => train(cfg),
        "synthesize" => synthesize_cmd(cfg),
        "eval-zsl" => eval_zsl(cfg),
        "eval-gzsl" => eval_gzsl(cfg),
        "retrieve" => retrieve(cfg),
        "sweep" => sweep(cfg),
        "gradcheck" => gradcheck(cfg),
        other => Err(Error::InvalidArgument(format!("unknown command {other:?}"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(cfg: &Config) -> Result<Dataset> {
    if !cfg.data.is_dir() {
        return Err(Error::Precondition(format!(
            "dataset directory {} does not exist (run `zsl toygen` or point --data at one)",
            cfg.data.display()
        )));
    }
    let ds = Dataset::load_dir(&cfg.data)?;
    ds.ensure_valid()?;
    Ok(ds)
}

/// Dataset, trained state and the checkpoint's hash.
fn load_trained(cfg: &Config) -> Result<(Dataset, ModelState, String)> {
    let ds = load_dataset(cfg)?;
    let path = cfg.out.join(CHECKPOINT);
    if !path.is_file() {
        return Err(Error::Precondition(format!("no checkpoint at {} (run `zsl train` first)", path.display())));
    }
    let state = ModelState::load_expecting(&path, &cfg.architecture_for(&ds))?;
    let hash = Checkpoint::file_hash(&path)?;
    Ok((ds, state, hash))
}

fn base_summary(command: &str, cfg: &Config, hash: &str) -> Summary {
    let mut s = Summary::default();
    s.push("command", command).push("seed", cfg.train.seed).push("checkpoint_sha256", hash);
    s
}

fn synthesis(cfg: &Config, samples: usize, sigma: f64) -> SynthesisConfig {
    SynthesisConfig { samples, sigma, n_way: cfg.train.episode.n_way, seed: cfg.train.seed }
}

fn toygen(cfg: &Config) -> Result<String> {
    let ds = make_toy_dataset(&cfg.toy)?;
    fs::create_dir_all(&cfg.data).map_err(|e| Error::io(&cfg.data, e))?;
    ds.save_dir(&cfg.data)?;
    let mut s = Summary::default();
    s.push("command", "toygen")
        .push("data", cfg.data.display())
        .push("classes", ds.n_classes())
        .push("images", ds.labels.len())
        .push("attr_dim", ds.attr_dim())
        .push("feat_dim", ds.feat_dim());
    Ok(s.render())
}

fn train(cfg: &Config) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let ck = cfg.out.join(CHECKPOINT);
    let mut trainer = Trainer::new(&ds, cfg.architecture_for(&ds), cfg.train.clone())?;
    let mut log = format!("{}\n", EpochLog::HEADER);
    let every = (cfg.train.epochs / 20).max(1);
    let result = trainer.run(Some(&ck), |l| {
        log.push_str(&l.row());
        log.push('\n');
        if l.epoch % every == 0 {
            log::info!("epoch {} l_d {:.4} l_g {:.4} l_ad {:.4} l_cls {:.4}", l.epoch, l.losses.l_d, l.losses.l_g, l.losses.l_ad, l.losses.l_cls);
        }
    });
    write(&cfg.out.join("train.log"), &log)?;
    let logs = result?;
    let mut s = base_summary("train", cfg, &Checkpoint::file_hash(&ck)?);
    s.push("epochs", trainer.epoch()).push("state_checksum", trainer.state().checksum());
    if let Some(last) = logs.last() {
        s.push("final_l_d", format!("{:.6}", last.losses.l_d))
            .push("final_l_g", format!("{:.6}", last.losses.l_g))
            .push("final_l_ad", format!("{:.6}", last.losses.l_ad))
            .push("final_l_cls", format!("{:.6}", last.losses.l_cls));
    }
    let text = s.render();
    write(&cfg.out.join("train.summary.txt"), &text)?;
    Ok(text)
}

fn synthesize_cmd(cfg: &Config) -> Result<String> {
    let (ds, state, hash) = load_trained(cfg)?;
    let unseen = ds.split.unseen_list();
    let set = synthesize(
        &state,
        ds.attributes.values(),
        &unseen,
        cfg.samples_zsl,
        cfg.train.sigma_test,
        cfg.train.episode.n_way,
        cfg.train.seed,
    )?;
    set.export(&cfg.out, "synthetic")?;
    let mean_q = set.quality.iter().sum::<f64>() / set.len().max(1) as f64;
    let mut s = base_summary("synthesize", cfg, &hash);
    s.push("rows", set.len()).push("classes", unseen.len()).push("mean_quality", format!("{mean_q:.6}"));
    Ok(s.render())
}

fn eval_zsl(cfg: &Config) -> Result<String> {
    let (ds, state, hash) = load_trained(cfg)?;
    let out = evaluate_zsl(&state, &ds, &synthesis(cfg, cfg.samples_zsl, cfg.train.sigma_test), &cfg.classifier)?;
    save_classifier(cfg.out.join("classifier.zsl.txt"), &out.classifier)?;
    let mut s = base_summary("eval-zsl", cfg, &hash);
    s.push("classifier", cfg.classifier.kind).push("samples", cfg.samples_zsl).push("unseen_mean", percent(out.accuracy.mean));
    let text = render_per_class("zero-shot per-class top-1 (%)", &[("unseen", &out.accuracy)], &s);
    write(&cfg.out.join("eval-zsl.txt"), &text)?;
    Ok(text)
}

fn eval_gzsl(cfg: &Config) -> Result<String> {
    let (ds, state, hash) = load_trained(cfg)?;
    let syn = synthesis(cfg, cfg.samples_gzsl, cfg.train.sigma_test);
    let out = evaluate_gzsl(&state, &ds, &syn, cfg.gzsl_seen_mode, &cfg.classifier)?;
    save_classifier(cfg.out.join("classifier.gzsl.txt"), &out.classifier)?;
    let r = &out.report;
    let mut s = base_summary("eval-gzsl", cfg, &hash);
    s.push("classifier", cfg.classifier.kind)
        .push("samples", cfg.samples_gzsl)
        .push("seen_mode", if cfg.gzsl_seen_mode == zsl_core::synthesis::SeenSource::Real { "real" } else { "synthetic" })
        .push("seen_mean", percent(r.seen.mean))
        .push("unseen_mean", percent(r.unseen.mean))
        .push("harmonic", percent(r.harmonic));
    let text = render_per_class("generalized zero-shot per-class top-1 (%)", &[("seen", &r.seen), ("unseen", &r.unseen)], &s);
    write(&cfg.out.join("eval-gzsl.txt"), &text)?;
    Ok(text)
}

fn retrieve(cfg: &Config) -> Result<String> {
    let (ds, state, hash) = load_trained(cfg)?;
    let rc = RetrievalConfig {
        samples: cfg.samples_zsl,
        sigma: cfg.train.sigma_test,
        n_way: cfg.train.episode.n_way,
        metric: cfg.retrieval_metric,
        pool: cfg.retrieval_pool,
        seed: cfg.train.seed,
    };
    let reports = retrieval_eval(&state, &ds, &cfg.retrieval_k, &rc)?;
    let mut s = base_summary("retrieve", cfg, &hash);
    s.push("metric", cfg.retrieval_metric.as_str()).push("pool", cfg.retrieval_pool.as_str());
    for r in &reports {
        s.push(&format!("precision_at_{}", r.k), percent(r.mean));
    }
    let text = render_retrieval(&reports, &s);
    write(&cfg.out.join("retrieve.txt"), &text)?;
    Ok(text)
}

/// One ZSL report per (sample count, test sigma) pair under `out/sweep/`.
fn sweep(cfg: &Config) -> Result<String> {
    let (ds, state, hash) = load_trained(cfg)?;
    let dir = cfg.out.join("sweep");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut s = base_summary("sweep", cfg, &hash);
    for &n in &cfg.sweep_samples {
        for &sigma in &cfg.sweep_sigmas {
            let out = evaluate_zsl(&state, &ds, &synthesis(cfg, n, sigma), &cfg.classifier)?;
            let mut rs = base_summary("sweep", cfg, &hash);
            rs.push("samples", n).push("sigma_test", sigma).push("unseen_mean", percent(out.accuracy.mean));
            let name: PathBuf = dir.join(format!("zsl-n{n}-sigma{sigma}.txt"));
            write(&name, &render_per_class("zero-shot per-class top-1 (%)", &[("unseen", &out.accuracy)], &rs))?;
            s.push(&format!("n{n}_sigma{sigma}"), percent(out.accuracy.mean));
        }
    }
    let text = s.render();
    write(&cfg.out.join("sweep.txt"), &text)?;
    Ok(text)
}

/// Finite-difference check of every network composition plus the weighted
/// softmax loss, at 50 random points each.
fn gradcheck(cfg: &Config) -> Result<String> {
    const POINTS: u64 = 50;
    const TOL: f64 = 1e-5;
    let arch = small_architecture();
    let mut report = String::from("# gradient check (max relative error over points)\n");
    let mut s = Summary::default();
    s.push("command", "gradcheck").push("points", POINTS).push("tolerance", TOL);
    let mut failed = Vec::new();
    let mut record = |name: &str, worst: f64, report: &mut String| {
        report.push_str(&format!("{name} {worst:.3e}\n"));
        s.push(name, format!("{worst:.3e}"));
        if !(worst < TOL) {
            failed.push(name.to_string());
        }
    };
    for kind in Composite::ALL {
        let mut worst: f64 = 0.0;
        for p in 0..POINTS {
            let r = check_composite(&arch, kind, cfg.train.seed.wrapping_add(p), TOL)?;
            worst = worst.max(r.max_rel_error);
        }
        record(kind.name(), worst, &mut report);
    }
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        worst = worst.max(check_weighted_loss(cfg.train.seed.wrapping_add(p), TOL)?.max_rel_error);
    }
    record("weighted_softmax", worst, &mut report);
    s.push("passed", failed.is_empty());
    report.push('\n');
    report.push_str(&s.render());
    write(&cfg.out.join("gradcheck.txt"), &report)?;
    if !failed.is_empty() {
        return Err(Error::Precondition(format!("gradient check failed for {}", failed.join(", "))));
    }
    Ok(report)
}
