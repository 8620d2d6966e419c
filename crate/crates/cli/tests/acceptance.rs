//! Acceptance suite: prints one PASS/FAIL line per criterion.
//!
//! `MUVFS_ACCEPTANCE_ONLY=1,2` restricts the run to some criteria and
//! `MUVFS_ACCEPTANCE_STRICT=1` turns any failure into a non-zero exit.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use muvfs_cli::commands::{cmd_gradcheck, evaluate_head, train_encoders, train_head};
use muvfs_cli::RunConfig;
use muvfs_core::a3m::{attend, Head, HeadConfig};
use muvfs_core::contrastive::{nt_xent, symmetric_kl};
use muvfs_core::gradcheck::{CheckOrder, FIRST_ORDER_TOL, SECOND_ORDER_TOL};
use muvfs_core::metalearn::{
    accuracy_ci, format_ci, meta_gradient, meta_test, protomaml_init, protonet_predict, prototypes,
    Objective, Order, TestProtocol,
};
use muvfs_core::mining::{mine_hard, sample_test_episodes, MiningConfig, SelectedBy, StreamScores};
use muvfs_core::rng::{self, Rng};
use muvfs_core::streams::StreamEmbeddings;
use muvfs_core::synthvid::{generate_dataset, Split};
use muvfs_core::tensor::{Graph, Tensor, TensorError, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let result = cmd_gradcheck(&RunConfig::default(), tmp.path());
    let elapsed = t.elapsed();
    let report = match result {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let names: BTreeSet<&str> = report.results.iter().map(|r| r.name.as_str()).collect();
    let chains = ["attend_classify_ce", "nt_xent"]
        .iter()
        .all(|n| names.contains(n));
    let tolerances = report.results.iter().all(|r| match r.order {
        CheckOrder::First => r.tolerance <= 1e-4,
        CheckOrder::Second => r.tolerance <= 1e-3,
    });
    let worst = |o: CheckOrder| {
        report
            .results
            .iter()
            .filter(|r| r.order == o)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    };
    let second = report
        .results
        .iter()
        .filter(|r| r.order == CheckOrder::Second)
        .count();
    let pass = report.all_passed()
        && chains
        && tolerances
        && second > 0
        && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{} checks ({second} double-backprop), worst first-order {:.1e} (tol {FIRST_ORDER_TOL:.0e}), \
             worst second-order {:.1e} (tol {SECOND_ORDER_TOL:.0e}), {}",
            report.results.len(),
            worst(CheckOrder::First),
            worst(CheckOrder::Second),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 2

fn brute_nt_xent(z: &[Vec<f64>], tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
            * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut total = 0.0;
    for i in 0..z.len() {
        let num = (cos(&z[i], &z[i ^ 1]) / tau).exp();
        let den: f64 = (0..z.len())
            .filter(|&k| k != i)
            .map(|k| (cos(&z[i], &z[k]) / tau).exp())
            .sum();
        total -= (num / den).ln();
    }
    total / z.len() as f64
}

fn nt_xent_value(rows: &[Vec<f64>], tau: f64) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_rows(rows).unwrap());
    let l = nt_xent(&mut g, z, tau).unwrap();
    g.value(l).item().unwrap()
}

/// `½ Σθ²` for support and query alike.
struct Quadratic;

impl Objective for Quadratic {
    fn support_loss(&self, g: &mut Graph, t: &[Var]) -> Result<Var, TensorError> {
        let sq = g.mul(t[0], t[0])?;
        let s = g.sum_all(sq)?;
        g.scale(s, 0.5)
    }
    fn query_loss(&self, g: &mut Graph, t: &[Var]) -> Result<Var, TensorError> {
        self.support_loss(g, t)
    }
}

fn closed_forms() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        let ok = (got - want).abs() < tol;
        pass &= ok;
        notes.push(format!("{name} {got:.6}{}", if ok { "" } else { " (off)" }));
    };

    check(
        "nt_xent single pair",
        nt_xent_value(&[vec![0.3, -1.0], vec![2.0, 0.7]], 0.1),
        0.0,
        1e-9,
    );
    let rows = vec![
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 1.0],
    ];
    let brute = brute_nt_xent(&rows, 1.0);
    check("nt_xent N=2", nt_xent_value(&rows, 1.0), brute, 1e-9);
    check("nt_xent N=2 rounded", brute, 0.5514, 5e-5);

    let l = 2.0 * std::f64::consts::LN_2;
    let mut g = Graph::new();
    let frames =
        g.constant(Tensor::new(vec![1, 2, 4], vec![0.0, 0.0, 0.0, 0.0, l, 0.0, 0.0, 0.0]).unwrap());
    let action = g.constant(Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
    let mut eye = Tensor::zeros(&[4, 4]);
    (0..4).for_each(|i| eye.data_mut()[i * 5] = 1.0);
    let (k, v, q) = (
        g.constant(eye.clone()),
        g.constant(eye.clone()),
        g.constant(eye),
    );
    let (a, _) = attend(&mut g, frames, action, k, v, q).unwrap();
    check("attention a1", g.value(a).data()[0], 1.0 / 3.0, 1e-12);
    check("attention a2", g.value(a).data()[1], 2.0 / 3.0, 1e-12);

    let mut g = Graph::new();
    let p = g.constant(Tensor::from_rows(&[vec![0.75, 0.25]]).unwrap());
    let q = g.constant(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
    let skl = symmetric_kl(&mut g, p, q).unwrap();
    let closed =
        0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln() + 0.5 * (0.5f64 / 0.75).ln() + 0.5 * 2f64.ln();
    check("symmetric KL", g.value(skl).item().unwrap(), closed, 1e-6);
    check("symmetric KL vs 0.2746", closed, 0.2746, 1e-4);

    let theta = vec![Tensor::vector(vec![1.0])];
    let so = meta_gradient(&Quadratic, &theta, 0.1, 1, Order::Second).unwrap();
    let fo = meta_gradient(&Quadratic, &theta, 0.1, 1, Order::First).unwrap();
    check("MAML second-order", so.grads[0].data()[0], 0.81, 1e-12);
    check("MAML first-order", fo.grads[0].data()[0], 0.9, 1e-12);

    let (m, h) = accuracy_ci(&[1.0, 0.0, 1.0, 1.0]).unwrap();
    check("CI mean", m, 75.0, 1e-9);
    check("CI half-width", h, 49.0, 1e-9);
    let text = format_ci(m, h);
    pass &= text == "75.00 ± 49.00";
    notes.push(format!("CI text \"{text}\""));
    outcome(pass, notes.join(", "))
}

// ---------------------------------------------------------------- 3

/// Positions of the `n` smallest `(score, id)` pairs by full sort.
fn sorted_lowest(scores: &[f64], ids: &[u64], n: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(ids[a].cmp(&ids[b])));
    order.into_iter().take(n).collect()
}

fn mining_oracle() -> Outcome {
    let mut r = rng::derive(2024, &[3]);
    let mut mismatches = 0;
    let mut with_32 = 0;
    for case in 0..1000 {
        let (n, m) = if case % 4 == 0 {
            with_32 += 1;
            (32, 256)
        } else {
            let n = r.gen_range(2..20);
            (n, r.gen_range(2 * n..6 * n))
        };
        // Coarse scores produce ties; ids are a random permutation.
        let levels = if case % 2 == 0 { 8.0 } else { 1e6 };
        let mut ids: Vec<u64> = (0..m as u64).map(|i| i * 7 + 3).collect();
        for i in (1..m).rev() {
            ids.swap(i, r.gen_range(0..=i));
        }
        let mut draw = || {
            (0..m)
                .map(|_| (r.gen_range(-1.0..1.0f64) * levels).round() / levels)
                .collect::<Vec<_>>()
        };
        let scores = StreamScores {
            video_ids: ids.clone(),
            appearance: draw(),
            action: draw(),
        };
        let cfg = MiningConfig {
            n,
            mining_batch: m.max(2 * n),
            exploration_fraction: 0.1,
            ..MiningConfig::default()
        };
        let pool = mine_hard(&scores, &cfg, &mut rng::derive(case, &[])).unwrap();
        let ap = sorted_lowest(&scores.appearance, &ids, n);
        let act = sorted_lowest(&scores.action, &ids, n);
        let want: BTreeSet<u64> = ap.union(&act).map(|&i| ids[i]).collect();
        let base: BTreeSet<u64> = pool
            .members
            .iter()
            .filter(|p| p.selected_by != SelectedBy::Exploration)
            .map(|p| p.video_id)
            .collect();
        let extras: Vec<u64> = pool
            .members
            .iter()
            .filter(|p| p.selected_by == SelectedBy::Exploration)
            .map(|p| p.video_id)
            .collect();
        let expected_extras = ((0.1 * want.len() as f64).ceil() as usize).min(m - want.len());
        if base != want
            || extras.len() != expected_extras
            || extras.iter().any(|e| want.contains(e))
        {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 score sets ({with_32} with n=32 over 256), {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------- 4

fn random_table(n: usize, frames: usize, d: usize, r: &mut Rng) -> Vec<StreamEmbeddings> {
    (0..n)
        .map(|_| {
            let f = Tensor::randn(&[frames, d], 1.0, r);
            let mean = (0..d)
                .map(|j| (0..frames).map(|i| f.data()[i * d + j]).sum::<f64>() / frames as f64)
                .collect();
            StreamEmbeddings {
                h_ap_frames: f,
                h_ap_mean: mean,
                h_act: Tensor::randn(&[d], 1.0, r).into_data(),
            }
        })
        .collect()
}

fn protocol() -> Outcome {
    let t = Instant::now();
    // 32 novel classes with 24 videos each, interleaved.
    let labels: Vec<usize> = (0..32 * 24).map(|i| (i * 13) % 32).collect();
    let episodes = sample_test_episodes(&labels, 5, 1, 10_000, &mut rng::derive(4, &[])).unwrap();
    let mut bad = 0;
    for ep in &episodes {
        let mut ok = ep.way == 5 && ep.support.len() == 5 && ep.query.len() == 5;
        let mut seen = BTreeSet::new();
        for c in 0..ep.way {
            let s: Vec<usize> = ep
                .support
                .iter()
                .filter(|p| p.1 == c)
                .map(|p| p.0)
                .collect();
            let q: Vec<usize> = ep.query.iter().filter(|p| p.1 == c).map(|p| p.0).collect();
            ok &= s.len() == 1 && q.len() == 1;
            let originals: BTreeSet<usize> = s.iter().chain(&q).map(|&i| labels[i]).collect();
            ok &= originals.len() == 1 && seen.insert(*originals.first().unwrap());
        }
        let support: BTreeSet<usize> = ep.support.iter().map(|p| p.0).collect();
        ok &= ep.query.iter().all(|p| !support.contains(&p.0));
        bad += usize::from(!ok);
    }

    let mut r = rng::derive(4, &[1]);
    let table = random_table(labels.len(), 8, 16, &mut r);
    let cfg = HeadConfig {
        embed_dim: 16,
        d_k: 8,
        d_v: 16,
        ..HeadConfig::default()
    };
    let mut head = Head::new(cfg, &mut r);
    let w = head.classifier_index().0;
    head.theta[w] = Tensor::randn(head.theta[w].shape(), 0.1, &mut r);
    let before = head.clone();
    let p = TestProtocol {
        finetune_epochs: 5,
        ..TestProtocol::default()
    };
    meta_test(&head, &table, &episodes[..200], &p, 4).unwrap();
    let unchanged = head == before;
    let elapsed = t.elapsed();
    outcome(
        bad == 0 && unchanged && elapsed < Duration::from_secs(120),
        format!(
            "10000 episodes, {bad} violations; theta {} after 200 fine-tuned episodes; {}",
            if unchanged {
                "bit-identical"
            } else {
                "CHANGED"
            },
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 5

fn proto_identity() -> Outcome {
    let mut r = rng::derive(5, &[]);
    let mut disagreements = 0;
    let mut decisions = 0;
    for _ in 0..1000 {
        let way = r.gen_range(2..=10);
        let shot = r.gen_range(1..=3);
        let d = r.gen_range(2..=24);
        let unit = |r: &mut Rng| {
            let v = Tensor::randn(&[d], 1.0, r).into_data();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let support: Vec<Vec<f64>> = (0..way * shot).map(|_| unit(&mut r)).collect();
        let labels: Vec<usize> = (0..way * shot).map(|i| i % way).collect();
        let queries: Vec<Vec<f64>> = (0..way).map(|_| unit(&mut r)).collect();
        let protos = prototypes(&support, &labels, way).unwrap();
        let nearest = protonet_predict(&protos, &queries);
        let (w, b) = protomaml_init(&protos);
        for (qi, q) in queries.iter().enumerate() {
            let logits: Vec<f64> = (0..way)
                .map(|c| (0..d).map(|i| q[i] * w.data()[i * way + c]).sum::<f64>() + b.data()[c])
                .collect();
            let best = (0..way).fold(0, |a, c| if logits[c] > logits[a] { c } else { a });
            decisions += 1;
            disagreements += usize::from(best != nearest[qi]);
        }
    }
    outcome(
        disagreements == 0,
        format!("1000 episodes, {decisions} query decisions, {disagreements} disagreements"),
    )
}

// ---------------------------------------------------------------- 6, 7, 8

const SEEDS: [u64; 3] = [1, 2, 3];
const TEST_EPISODES: usize = 2000;

#[derive(Default)]
struct SeedResults {
    a3m_hard: f64,
    a3m_random: f64,
    concat: f64,
    action_only: f64,
    appearance_only: f64,
    motion_split: (f64, f64),
    appearance_split: (f64, f64),
    ways: Vec<f64>,
}

fn accuracy(
    cfg: &RunConfig,
    head: &Head,
    model: &muvfs_core::streams::TwoStream,
    novel: &[&muvfs_core::synthvid::VideoTensor],
    labels: &str,
    ways: &str,
    threads: usize,
) -> Vec<f64> {
    let mut c = cfg.clone();
    c.set("eval.labels", labels).unwrap();
    c.set("eval.ways", ways).unwrap();
    evaluate_head(&c, head, model, novel, threads)
        .unwrap()
        .iter()
        .map(|r| r.mean_acc)
        .collect()
}

fn run_seed(seed: u64, threads: usize) -> SeedResults {
    let t = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.set_seed(seed);
    cfg.set("eval.episodes", &TEST_EPISODES.to_string())
        .unwrap();
    let ds = generate_dataset(&cfg.generate_spec().unwrap()).unwrap();
    let train = ds.split(Split::UnlabeledTrain);
    let novel = ds.split(Split::NovelTest);
    let (model, _) = train_encoders(&cfg, &train).unwrap();
    let head_for = |ablation: &str| {
        let mut c = cfg.clone();
        c.set("ablation", ablation).unwrap();
        train_head(&c, &model, &train).unwrap().0
    };
    let joint5 = |h: &Head| accuracy(&cfg, h, &model, &novel, "joint", "5", threads)[0];

    let mut out = SeedResults::default();
    let hard = head_for("none");
    out.ways = accuracy(&cfg, &hard, &model, &novel, "joint", "5,10,20", threads);
    out.a3m_hard = out.ways[0];
    out.a3m_random = joint5(&head_for("no-hard-episodes"));
    out.concat = joint5(&head_for("concat-no-a3m"));
    let action = head_for("action-only");
    let appearance = head_for("appearance-only");
    out.action_only = joint5(&action);
    out.appearance_only = joint5(&appearance);
    let five = |h: &Head, labels: &str| accuracy(&cfg, h, &model, &novel, labels, "5", threads)[0];
    out.motion_split = (five(&action, "motion"), five(&appearance, "motion"));
    out.appearance_split = (five(&action, "appearance"), five(&appearance, "appearance"));
    println!(
        "  seed {seed}: joint 5-way a3m+hard {:.2}, a3m+random {:.2}, concat {:.2}, action-only {:.2}, \
         appearance-only {:.2}; motion labels act/app {:.2}/{:.2}; appearance labels act/app {:.2}/{:.2}; \
         a3m ways 5/10/20 {:.2}/{:.2}/{:.2} ({})",
        out.a3m_hard,
        out.a3m_random,
        out.concat,
        out.action_only,
        out.appearance_only,
        out.motion_split.0,
        out.motion_split.1,
        out.appearance_split.0,
        out.appearance_split.1,
        out.ways[0],
        out.ways[1],
        out.ways[2],
        secs(t.elapsed())
    );
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn table2(runs: &[SeedResults], elapsed: Duration) -> Outcome {
    let m = |f: fn(&SeedResults) -> f64| mean(runs.iter().map(f));
    let (hard, random, concat) = (m(|r| r.a3m_hard), m(|r| r.a3m_random), m(|r| r.concat));
    let (act, app) = (m(|r| r.action_only), m(|r| r.appearance_only));
    let a = concat - act >= 2.0 && concat - app >= 2.0;
    let b = hard - concat >= 1.0;
    let c = hard - random >= 1.0;
    let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
    outcome(
        a && b && c && elapsed < Duration::from_secs(30 * 60),
        format!(
            "(a) concat {concat:.2} vs action-only {act:.2} / appearance-only {app:.2} [{}]; \
             (b) a3m+hard {hard:.2} vs concat {concat:.2}, gap {:+.2} [{}]; \
             (c) hard {hard:.2} vs random {random:.2}, gap {:+.2} [{}]; {} seeds x {TEST_EPISODES} episodes, {}",
            verdict(a),
            hard - concat,
            verdict(b),
            hard - random,
            verdict(c),
            runs.len(),
            secs(elapsed)
        ),
    )
}

fn specialization(runs: &[SeedResults]) -> Outcome {
    let (m_act, m_app) = (
        mean(runs.iter().map(|r| r.motion_split.0)),
        mean(runs.iter().map(|r| r.motion_split.1)),
    );
    let (a_act, a_app) = (
        mean(runs.iter().map(|r| r.appearance_split.0)),
        mean(runs.iter().map(|r| r.appearance_split.1)),
    );
    outcome(
        m_act - m_app >= 5.0 && a_app - a_act >= 5.0,
        format!(
            "motion classes: action-only {m_act:.2} vs appearance-only {m_app:.2} ({:+.2}); \
             appearance classes: appearance-only {a_app:.2} vs action-only {a_act:.2} ({:+.2})",
            m_act - m_app,
            a_app - a_act
        ),
    )
}

fn many_way(runs: &[SeedResults]) -> Outcome {
    let acc: Vec<f64> = (0..3)
        .map(|i| mean(runs.iter().map(|r| r.ways[i])))
        .collect();
    outcome(
        acc[0] - acc[1] >= 2.0 && acc[1] - acc[2] >= 2.0,
        format!("5/10/20-way {:.2} > {:.2} > {:.2}", acc[0], acc[1], acc[2]),
    )
}

// ---------------------------------------------------------------- 9

const SMALL: &str = "\
seed = 11
data.appearance_classes = 4
data.motion_classes = 4
data.videos_per_class = 4
data.frames = 16
data.height = 16
data.width = 16
sampling.appearance = 4x1
sampling.action = 2x2
sampling.appearance_res = 8
sampling.action_res = 4
model.hidden = 16
model.embed_dim = 8
model.proj_hidden = 16
model.proj_dim = 8
pretrain.epochs = 2
pretrain.batch_size = 16
pretrain.warmup_epochs = 1
head.d_k = 4
head.d_v = 8
mining.n = 8
mining.batch = 16
meta.iterations = 4
meta.episodes_per_iter = 2
eval.episodes = 20
eval.finetune_epochs = 3
eval.ways = 2,5
gradcheck.seeds = 1
";

fn files_except_sidecars(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
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

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let commands = ["generate", "pretrain", "metatrain", "evaluate", "gradcheck"];
    let run = |name: &str, threads: &str| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        for cmd in commands {
            let o = Command::new(env!("CARGO_BIN_EXE_muvfs"))
                .arg("--config")
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .arg(cmd)
                .env("MUVFS_THREADS", threads)
                .env("RUST_LOG", "warn")
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                return Err(format!("{cmd} exited with {:?}", o.status.code()));
            }
        }
        Ok(out)
    };
    let (a, b) = match (run("a", "1"), run("b", "4")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let (fa, fb) = (files_except_sidecars(&a), files_except_sidecars(&b));
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty(),
        format!(
            "{} commands twice (1 and 4 threads): {} output files compared, {} differ",
            commands.len(),
            fa.len(),
            differing.len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("MUVFS_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: u32| only.as_ref().is_none_or(|s| s.contains(&i));
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let titles = [
        "gradient correctness",
        "closed-form oracles",
        "mining oracle equivalence",
        "protocol invariants",
        "ProtoMAML/ProtoNet identity",
        "directional ablation ordering",
        "stream specialization",
        "many-way monotonicity",
        "determinism",
    ];
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let simple: [(u32, fn() -> Outcome); 5] = [
        (1, gradients),
        (2, closed_forms),
        (3, mining_oracle),
        (4, protocol),
        (5, proto_identity),
    ];
    for (i, f) in simple {
        if wanted(i) {
            results.push((i, f()));
            report(i, titles[i as usize - 1], &results.last().unwrap().1);
        }
    }
    if wanted(6) || wanted(7) || wanted(8) {
        let t = Instant::now();
        let runs: Vec<SeedResults> = SEEDS.iter().map(|&s| run_seed(s, threads)).collect();
        let elapsed = t.elapsed();
        for (i, o) in [
            (6, table2(&runs, elapsed)),
            (7, specialization(&runs)),
            (8, many_way(&runs)),
        ] {
            if wanted(i) {
                report(i, titles[i as usize - 1], &o);
                results.push((i, o));
            }
        }
    }
    if wanted(9) {
        let o = determinism();
        report(9, titles[8], &o);
        results.push((9, o));
    }
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    let strict = std::env::var("MUVFS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}

fn report(i: u32, title: &str, o: &Outcome) {
    println!(
        "{} criterion {i} ({title}): {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}
