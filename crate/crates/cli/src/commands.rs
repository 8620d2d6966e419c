//! The five pipeline commands. Each writes into its own subdirectory of the
//! output directory: primary outputs, `config.txt` and a `run.json` sidecar
//! holding the only timestamps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use muvfs_core::a3m::Head;
use muvfs_core::contrastive::{log_csv, pretrain, LogRow};
use muvfs_core::gradcheck::{self, GradcheckOptions, GradcheckReport};
use muvfs_core::metalearn::{
    accuracy_ci, meta_log_csv, meta_test, meta_train, EvalReport, Learner, MetaLearner, MetaLogRow,
};
use muvfs_core::mining::{embed_plain, sample_test_episodes, ViewBank};
use muvfs_core::rng;
use muvfs_core::streams::TwoStream;
use muvfs_core::synthvid::{
    generate_dataset, read_dataset, write_dataset, Dataset, Split, VideoTensor,
};

use crate::config::RunConfig;
use crate::error::CliError;

const TAG_MODEL_INIT: u64 = 0x494e_4954;
const TAG_HEAD_INIT: u64 = 0x4845_4144;
const TAG_TEST_EPISODES: u64 = 0x5445_5354;

/// Worker count from `MUVFS_THREADS`, else the machine's parallelism.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("MUVFS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!(
                "MUVFS_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Create `out` if needed (its parent must exist) and the command's
/// subdirectory inside it.
fn prepare(out: &Path, sub: &str) -> Result<PathBuf, CliError> {
    if !out.is_dir() {
        fs::create_dir(out).map_err(|e| CliError::io(out, e))?;
    }
    let dir = out.join(sub);
    if !dir.is_dir() {
        fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let text = format!(
        "# config_digest = {}\n{}",
        cfg.digest(),
        cfg.canonical_text()
    );
    write(&dir.join("config.txt"), &text)
}

fn write_sidecar(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    started: f64,
    threads: usize,
) -> Result<(), CliError> {
    let meta = serde_json::json!({
        "command": command,
        "config_digest": cfg.digest(),
        "seed": cfg.seed(),
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_now(),
    });
    write(
        &dir.join("run.json"),
        &(serde_json::to_string_pretty(&meta).expect("json") + "\n"),
    )
}

fn input_path(cfg: &RunConfig, key: &str, out: &Path, fallback: &str) -> PathBuf {
    cfg.path(key)
        .map_or_else(|| out.join(fallback), PathBuf::from)
}

fn load_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset, CliError> {
    let dir = input_path(cfg, "paths.dataset", out, "dataset");
    Ok(read_dataset(&dir)?)
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<TwoStream, CliError> {
    let dir = input_path(cfg, "paths.pretrained", out, "pretrain/checkpoint");
    let model = TwoStream::load(&dir)?;
    if model.config != cfg.stream_config()? {
        return Err(CliError::Config(format!(
            "pretrained checkpoint {} was built with a different model configuration",
            dir.display()
        )));
    }
    Ok(model)
}

/// Freshly initialised encoders for `cfg`.
pub fn init_model(cfg: &RunConfig) -> Result<TwoStream, CliError> {
    let sc = cfg.stream_config()?;
    Ok(TwoStream::new(
        sc,
        &mut rng::derive(cfg.seed(), &[TAG_MODEL_INIT]),
    ))
}

/// Freshly initialised meta head for `cfg`.
pub fn init_head(cfg: &RunConfig) -> Result<Head, CliError> {
    let hc = cfg.head_config()?;
    Ok(Head::new(
        hc,
        &mut rng::derive(cfg.seed(), &[TAG_HEAD_INIT]),
    ))
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let started = unix_now();
    let spec = cfg.generate_spec()?;
    let ds = generate_dataset(&spec)?;
    let dir = prepare(out, "dataset")?;
    write_dataset(&ds, &dir)?;
    write_config(&dir, cfg)?;
    write_sidecar(&dir, "generate", cfg, started, 1)?;
    log::info!("wrote {} videos to {}", ds.videos.len(), dir.display());
    Ok(dir)
}

/// Contrastive pretraining from the seeded initialisation.
pub fn train_encoders(
    cfg: &RunConfig,
    train: &[&VideoTensor],
) -> Result<(TwoStream, Vec<LogRow>), CliError> {
    let pc = cfg.pretrain_config()?;
    let mut model = init_model(cfg)?;
    let rows = pretrain(&mut model, train, &pc)?;
    Ok((model, rows))
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let started = unix_now();
    let pc = cfg.pretrain_config()?;
    let ds = load_dataset(cfg, out)?;
    let dir = prepare(out, "pretrain")?;
    let (model, rows) = train_encoders(cfg, &ds.split(Split::UnlabeledTrain))?;
    model.save(&dir.join("checkpoint"))?;
    write(
        &dir.join("log.csv"),
        &log_csv(&rows, pc.joint_loss, pc.skl_loss),
    )?;
    write_config(&dir, cfg)?;
    write_sidecar(&dir, "pretrain", cfg, started, 1)?;
    if let Some(last) = rows.last() {
        log::info!(
            "epoch {}: loss_ap {:.4} loss_act {:.4}",
            last.epoch,
            last.loss_ap,
            last.loss_act
        );
    }
    Ok(dir)
}

/// Meta-trains a fresh head on episodes drawn from a view bank of `train`.
pub fn train_head(
    cfg: &RunConfig,
    model: &TwoStream,
    train: &[&VideoTensor],
) -> Result<(Head, Vec<MetaLogRow>), CliError> {
    let mc = cfg.meta_config()?;
    let mining = cfg.mining_config()?;
    let (app, act) = cfg.schemes()?;
    let aug = cfg.augmentation()?;
    let mut learner = MetaLearner::new(init_head(cfg)?);
    let bank = ViewBank::build(model, train, cfg.bank_views(), &app, &act, &aug, cfg.seed())?;
    let rows = meta_train(&mut learner, &bank, &mining, &mc)?;
    Ok((learner.head, rows))
}

pub fn cmd_metatrain(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let started = unix_now();
    cfg.meta_config()?;
    cfg.mining_config()?;
    let model = load_model(cfg, out)?;
    let ds = load_dataset(cfg, out)?;
    let dir = prepare(out, "meta")?;
    let (head, rows) = train_head(cfg, &model, &ds.split(Split::UnlabeledTrain))?;
    let extra = serde_json::json!({ "config_digest": cfg.digest(), "ablation": cfg.ablation() });
    head.save(&dir.join("checkpoint"), extra)?;
    write(&dir.join("log.csv"), &meta_log_csv(&rows))?;
    write_config(&dir, cfg)?;
    write_sidecar(&dir, "metatrain", cfg, started, 1)?;
    Ok(dir)
}

/// Settings that only fine-tuning learners read.
const FINETUNE_KEYS: &[&str] = &["eval.finetune_epochs", "eval.finetune_lr"];

/// Warnings about settings the chosen learner ignores.
pub fn ignored_settings(cfg: &RunConfig) -> Vec<String> {
    let learner = cfg.learner();
    let mut out: Vec<String> = if learner.finetunes() {
        Vec::new()
    } else {
        FINETUNE_KEYS
            .iter()
            .filter(|k| cfg.is_explicit(k))
            .map(|k| format!("{k} is ignored by learner {}", learner.name()))
            .collect()
    };
    if learner != Learner::Baselinepp && cfg.is_explicit("eval.cosine_scale") {
        out.push(format!(
            "eval.cosine_scale is ignored by learner {}",
            learner.name()
        ));
    }
    out
}

pub struct Evaluation {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub warnings: Vec<String>,
}

/// One report per configured way on the novel split.
pub fn evaluate_head(
    cfg: &RunConfig,
    head: &Head,
    model: &TwoStream,
    novel: &[&VideoTensor],
    threads: usize,
) -> Result<Vec<EvalReport>, CliError> {
    let protocols = cfg
        .ways()
        .into_iter()
        .map(|w| cfg.test_protocol(w))
        .collect::<Result<Vec<_>, _>>()?;
    let (app, act) = cfg.schemes()?;
    let labels: Vec<usize> = novel
        .iter()
        .map(|v| match cfg.labels() {
            "motion" => v.motion_class,
            "appearance" => v.appearance_class,
            _ => v.joint_class,
        })
        .collect();
    let table = embed_plain(model, novel, &app, &act, cfg.seed())?;
    let mut reports = Vec::new();
    for p in &protocols {
        let mut ep_rng = rng::derive(cfg.seed(), &[TAG_TEST_EPISODES, p.way as u64]);
        let episodes = sample_test_episodes(&labels, p.way, p.shot, p.episodes, &mut ep_rng)?;
        let accs = meta_test(head, &table, &episodes, p, threads)?;
        let (mean_acc, ci95) = accuracy_ci(&accs)?;
        let report = EvalReport {
            way: p.way,
            shot: p.shot,
            episodes: p.episodes,
            mean_acc,
            ci95,
            learner: p.learner.name().to_string(),
            head: head.config.kind.name().to_string(),
            seed: cfg.seed(),
            config_digest: cfg.digest(),
        };
        log::info!("{}-way {}-shot: {}", p.way, p.shot, report.summary());
        reports.push(report);
    }
    Ok(reports)
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Evaluation, CliError> {
    let started = unix_now();
    let warnings = ignored_settings(cfg);
    for w in cfg.ways() {
        cfg.test_protocol(w)?;
    }
    let meta_dir = input_path(cfg, "paths.meta", out, "meta/checkpoint");
    let (head, _) = Head::load(&meta_dir)?;
    if head.config.kind != cfg.head_kind() {
        return Err(CliError::Config(format!(
            "meta checkpoint {} holds a {} head but the ablation setting asks for {}",
            meta_dir.display(),
            head.config.kind.name(),
            cfg.head_kind().name()
        )));
    }
    let model = load_model(cfg, out)?;
    let ds = load_dataset(cfg, out)?;
    let reports = evaluate_head(cfg, &head, &model, &ds.split(Split::NovelTest), threads)?;

    let dir = prepare(out, "eval")?;
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    write(&dir.join("report.json"), &(json + "\n"))?;
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &reports {
        csv += &r.csv_row();
        csv.push('\n');
    }
    write(&dir.join("report.csv"), &csv)?;
    write_config(&dir, cfg)?;
    write_sidecar(&dir, "evaluate", cfg, started, threads)?;
    Ok(Evaluation {
        dir,
        reports,
        warnings,
    })
}

pub fn gradcheck_options(cfg: &RunConfig) -> GradcheckOptions {
    GradcheckOptions {
        seeds: cfg.gradcheck_seeds(),
        base_seed: cfg.seed(),
        inject_fault: cfg.gradcheck_fault(),
        only: cfg.gradcheck_only(),
    }
}

/// Runs every check and writes the report; failures become a verification
/// error that names the failing checks.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckReport, CliError> {
    let started = unix_now();
    let opts = gradcheck_options(cfg);
    let checks = gradcheck::default_checks();
    for name in &opts.only {
        if !checks.iter().any(|c| c.name == name) {
            return Err(CliError::Config(format!(
                "gradcheck.only names unknown check `{name}`"
            )));
        }
    }
    let report = gradcheck::run(&checks, &opts);
    let dir = prepare(out, "gradcheck")?;
    write(&dir.join("report.txt"), &report.to_text())?;
    write_config(&dir, cfg)?;
    write_sidecar(&dir, "gradcheck", cfg, started, 1)?;
    if report.all_passed() {
        Ok(report)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|r| r.name.as_str()).collect();
        Err(CliError::Verification(format!(
            "gradient check failed for: {}",
            names.join(", ")
        )))
    }
}
