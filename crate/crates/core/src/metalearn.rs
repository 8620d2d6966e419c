//! Episodic meta-training of the head (MAML, first or second order), the
//! meta-test protocol, prototype-based learners and accuracy statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::a3m::{argmax_rows, Head, HeadInput, HeadKind};
use crate::mining::{self, BankItem, Episode, MiningConfig, MiningError, ViewBank};
use crate::rng::{self, Rng};
use crate::streams::StreamEmbeddings;
use crate::tensor::{Graph, LrSchedule, OptimizerKind, OptimizerState, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("invalid meta-learning config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error("non-finite {what} loss")]
    NonFinite { what: &'static str },
    #[error("{0}")]
    Empty(&'static str),
    #[error("meta-training iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<MetaError>,
    },
}

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    First,
    Second,
}

/// Where meta-training episodes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeSource {
    /// Pool mined from each iteration's mining batch.
    Hard,
    /// The mining batch itself, unmined.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub episodes_per_iter: usize,
    pub iterations: usize,
    pub inner_steps: usize,
    pub order: Order,
    /// Cosine annealing floor as a fraction of `beta`.
    pub final_lr_fraction: f64,
    pub source: EpisodeSource,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 3e-4,
            episodes_per_iter: 10,
            iterations: 300,
            inner_steps: 1,
            order: Order::First,
            final_lr_fraction: 0.1,
            source: EpisodeSource::Hard,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.alpha) || !pos(self.beta) {
            return Err(MetaError::Config(format!("alpha {} and beta {} must be positive", self.alpha, self.beta)));
        }
        if self.episodes_per_iter == 0 || self.inner_steps == 0 {
            return Err(MetaError::Config("episodes_per_iter and inner_steps must be at least 1".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(MetaError::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::cosine(self.beta, self.beta * self.final_lr_fraction, self.iterations.max(1))
    }
}

/// Loss of one task as a function of bound parameters.
pub trait Objective {
    fn support_loss(&self, g: &mut Graph, theta: &[Var]) -> std::result::Result<Var, TensorError>;
    fn query_loss(&self, g: &mut Graph, theta: &[Var]) -> std::result::Result<Var, TensorError>;
    /// Fraction of query items classified correctly at `theta`, when meaningful.
    fn query_accuracy(&self, _theta: &[Tensor]) -> Option<f64> {
        None
    }
}

fn check_finite(g: &Graph, loss: Var, what: &'static str) -> Result<f64> {
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(MetaError::NonFinite { what });
    }
    Ok(v)
}

/// `steps` plain gradient-descent updates of a copy of `theta` at rate `lr`.
pub fn gradient_descent<F>(theta: &[Tensor], lr: f64, steps: usize, mut loss: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&mut Graph, &[Var]) -> std::result::Result<Var, TensorError>,
{
    let mut cur = theta.to_vec();
    for _ in 0..steps {
        let mut g = Graph::new();
        let vars: Vec<Var> = cur.iter().map(|t| g.param(t.clone())).collect();
        let l = loss(&mut g, &vars)?;
        check_finite(&g, l, "support")?;
        if lr == 0.0 {
            continue;
        }
        let grads = g.backward(l)?;
        for (t, v) in cur.iter_mut().zip(&vars) {
            let gr = grads.wrt(*v);
            t.data_mut().iter_mut().zip(gr.data()).for_each(|(p, d)| *p -= lr * d);
        }
    }
    Ok(cur)
}

pub fn inner_adapt<O: Objective>(obj: &O, theta: &[Tensor], alpha: f64, steps: usize) -> Result<Vec<Tensor>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(MetaError::Config(format!("inner learning rate {alpha} must be non-negative")));
    }
    gradient_descent(theta, alpha, steps, |g, v| obj.support_loss(g, v))
}

#[derive(Clone, Debug)]
pub struct MetaGradient {
    pub grads: Vec<Tensor>,
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
}

/// Gradient of the post-adaptation query loss with respect to `theta`.
pub fn meta_gradient<O: Objective>(obj: &O, theta: &[Tensor], alpha: f64, steps: usize, order: Order) -> Result<MetaGradient> {
    match order {
        Order::First => {
            let adapted = inner_adapt(obj, theta, alpha, steps)?;
            let mut g = Graph::new();
            let vars: Vec<Var> = adapted.iter().map(|t| g.param(t.clone())).collect();
            let q = obj.query_loss(&mut g, &vars)?;
            let query_loss = check_finite(&g, q, "query")?;
            let grads = g.backward(q)?;
            Ok(MetaGradient {
                grads: vars.iter().map(|v| grads.wrt(*v).clone()).collect(),
                query_loss,
                query_accuracy: obj.query_accuracy(&adapted),
            })
        }
        Order::Second => {
            let mut g = Graph::new();
            let leaves: Vec<Var> = theta.iter().map(|t| g.param(t.clone())).collect();
            let mut cur = leaves.clone();
            for _ in 0..steps {
                let l = obj.support_loss(&mut g, &cur)?;
                check_finite(&g, l, "support")?;
                let gs = g.grad_graph(l, &cur)?;
                cur = cur
                    .iter()
                    .zip(gs)
                    .map(|(&p, d)| {
                        let step = g.scale(d, alpha)?;
                        g.sub(p, step)
                    })
                    .collect::<std::result::Result<_, _>>()?;
            }
            let q = obj.query_loss(&mut g, &cur)?;
            let query_loss = check_finite(&g, q, "query")?;
            let grads = g.backward(q)?;
            let adapted: Vec<Tensor> = cur.iter().map(|v| g.value(*v).clone()).collect();
            Ok(MetaGradient {
                grads: leaves.iter().map(|v| grads.wrt(*v).clone()).collect(),
                query_loss,
                query_accuracy: obj.query_accuracy(&adapted),
            })
        }
    }
}

/// Sum of meta-gradients over `tasks`, plus mean query loss and accuracy.
pub fn summed_meta_gradient<O: Objective>(
    tasks: &[O],
    theta: &[Tensor],
    alpha: f64,
    steps: usize,
    order: Order,
) -> Result<MetaGradient> {
    if tasks.is_empty() {
        return Err(MetaError::Empty("meta step needs at least one episode"));
    }
    let mut total: Vec<Tensor> = theta.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let (mut loss, mut acc, mut n_acc) = (0.0, 0.0, 0usize);
    for task in tasks {
        let mg = meta_gradient(task, theta, alpha, steps, order)?;
        for (acc_t, gr) in total.iter_mut().zip(&mg.grads) {
            acc_t.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b);
        }
        loss += mg.query_loss;
        if let Some(a) = mg.query_accuracy {
            acc += a;
            n_acc += 1;
        }
    }
    Ok(MetaGradient {
        grads: total,
        query_loss: loss / tasks.len() as f64,
        query_accuracy: (n_acc > 0).then(|| acc / n_acc as f64),
    })
}

/// One task for the head: support and query items with their labels.
pub struct HeadTask<'a> {
    pub head: &'a Head,
    pub support: HeadInput,
    pub support_labels: Vec<usize>,
    pub query: HeadInput,
    pub query_labels: Vec<usize>,
}

impl<'a> HeadTask<'a> {
    pub fn from_bank(head: &'a Head, bank: &ViewBank, ep: &Episode<BankItem>) -> Self {
        let pick = |items: &[(BankItem, usize)]| {
            let embs: Vec<&StreamEmbeddings> = items.iter().map(|(b, _)| &bank.entries[b.video][b.view]).collect();
            (head.input(&embs), items.iter().map(|p| p.1).collect())
        };
        let (support, support_labels) = pick(&ep.support);
        let (query, query_labels) = pick(&ep.query);
        Self {
            head,
            support,
            support_labels,
            query,
            query_labels,
        }
    }
}

impl Objective for HeadTask<'_> {
    fn support_loss(&self, g: &mut Graph, theta: &[Var]) -> std::result::Result<Var, TensorError> {
        self.head.loss(g, theta, &self.support, &self.support_labels)
    }

    fn query_loss(&self, g: &mut Graph, theta: &[Var]) -> std::result::Result<Var, TensorError> {
        self.head.loss(g, theta, &self.query, &self.query_labels)
    }

    fn query_accuracy(&self, theta: &[Tensor]) -> Option<f64> {
        let head = Head {
            config: self.head.config.clone(),
            theta: theta.to_vec(),
        };
        let pred = head.predict(&self.query).ok()?;
        Some(fraction_correct(&pred, &self.query_labels))
    }
}

pub fn fraction_correct(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct MetaLearner {
    pub head: Head,
    pub optimizer: OptimizerState,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaLogRow {
    pub iteration: usize,
    pub lr: f64,
    pub query_loss: f64,
    pub query_accuracy: f64,
    pub pool_size: usize,
}

pub fn meta_log_csv(rows: &[MetaLogRow]) -> String {
    let mut s = String::from("iteration,lr,query_loss,query_accuracy,pool_size\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.9e},{:.9e},{:.6},{}\n",
            r.iteration, r.lr, r.query_loss, r.query_accuracy, r.pool_size
        ));
    }
    s
}

impl MetaLearner {
    pub fn new(head: Head) -> Self {
        let refs: Vec<&Tensor> = head.theta.iter().collect();
        let optimizer = OptimizerState::new(OptimizerKind::adam(), &refs);
        Self {
            head,
            optimizer,
            iteration: 0,
        }
    }

    /// Sum query-loss meta-gradients over `tasks` and take one optimizer step.
    pub fn meta_step<O: Objective>(&mut self, tasks: &[O], cfg: &MetaConfig) -> Result<MetaLogRow> {
        let mg = summed_meta_gradient(tasks, &self.head.theta, cfg.alpha, cfg.inner_steps, cfg.order)?;
        let lr = cfg.schedule().lr_at(self.iteration)?;
        let grads: Vec<&Tensor> = mg.grads.iter().collect();
        let mut params: Vec<&mut Tensor> = self.head.theta.iter_mut().collect();
        self.optimizer.step(&mut params, &grads, lr)?;
        let row = MetaLogRow {
            iteration: self.iteration,
            lr,
            query_loss: mg.query_loss,
            query_accuracy: mg.query_accuracy.unwrap_or(f64::NAN),
            pool_size: 0,
        };
        self.iteration += 1;
        Ok(row)
    }
}

const TAG_META: u64 = 0x4d45_5441;

/// Mine a pool, build `E` instance episodes and step, `cfg.iterations` times.
pub fn meta_train(
    learner: &mut MetaLearner,
    bank: &ViewBank,
    mining_cfg: &MiningConfig,
    cfg: &MetaConfig,
) -> Result<Vec<MetaLogRow>> {
    cfg.validate()?;
    mining_cfg.validate()?;
    if learner.head.config.way != mining_cfg.way {
        return Err(MetaError::Config(format!(
            "head width {} differs from episode way {}",
            learner.head.config.way, mining_cfg.way
        )));
    }
    let position: HashMap<u64, usize> = bank.video_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let wrap = |e: MetaError| MetaError::Iteration {
            iteration: it,
            source: Box::new(e),
        };
        let mut r = rng::derive(cfg.seed, &[TAG_META, it as u64]);
        let row = (|| {
            let batch = mining::sample_mining_batch(bank.len(), mining_cfg.mining_batch, &mut r);
            let pool: Vec<usize> = match cfg.source {
                EpisodeSource::Hard => {
                    let scores = mining::agreement_scores(bank, &batch, &mut r)?;
                    let hard = mining::mine_hard(&scores, mining_cfg, &mut r)?;
                    hard.ids().iter().map(|id| position[id]).collect()
                }
                EpisodeSource::Random => batch,
            };
            let episodes = mining::build_instance_episodes(bank, &pool, mining_cfg, cfg.episodes_per_iter, &mut r)?;
            let head = learner.head.clone();
            let tasks: Vec<HeadTask> = episodes.iter().map(|e| HeadTask::from_bank(&head, bank, e)).collect();
            let mut row = learner.meta_step(&tasks, cfg)?;
            row.pool_size = pool.len();
            Ok(row)
        })()
        .map_err(wrap)?;
        log::debug!("meta iteration {it}: query loss {:.4}, acc {:.3}", row.query_loss, row.query_accuracy);
        log.push(row);
    }
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    Maml,
    Protonet,
    Protomaml,
    Baselinepp,
}

impl Learner {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "maml" => Learner::Maml,
            "protonet" => Learner::Protonet,
            "protomaml" => Learner::Protomaml,
            "baselinepp" | "baseline++" => Learner::Baselinepp,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Learner::Maml => "maml",
            Learner::Protonet => "protonet",
            Learner::Protomaml => "protomaml",
            Learner::Baselinepp => "baselinepp",
        }
    }

    pub fn finetunes(self) -> bool {
        self != Learner::Protonet
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestProtocol {
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub learner: Learner,
    /// Initial cosine-classifier scale for Baseline++.
    pub cosine_scale: f64,
    pub seed: u64,
}

impl Default for TestProtocol {
    fn default() -> Self {
        Self {
            finetune_lr: 10.0,
            finetune_epochs: 50,
            episodes: 10_000,
            way: 5,
            shot: 1,
            learner: Learner::Maml,
            cosine_scale: 10.0,
            seed: 0,
        }
    }
}

impl TestProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return Err(MetaError::Config("finetune_lr must be positive".into()));
        }
        if self.way < 2 || self.shot < 1 {
            return Err(MetaError::Config(format!("way {} must be >= 2 and shot {} >= 1", self.way, self.shot)));
        }
        if self.cosine_scale.is_nan() || self.cosine_scale <= 0.0 {
            return Err(MetaError::Config("cosine_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Class prototypes: mean embedding per label `0..way`.
pub fn prototypes(support: &[Vec<f64>], labels: &[usize], way: usize) -> Result<Vec<Vec<f64>>> {
    let d = support.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; way];
    let mut counts = vec![0usize; way];
    for (x, &c) in support.iter().zip(labels) {
        if c >= way {
            return Err(MetaError::Config(format!("label {c} outside way {way}")));
        }
        sums[c].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(MetaError::Empty("every class needs at least one support item"));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest prototype in Euclidean distance; ties go to the lower class.
pub fn protonet_predict(protos: &[Vec<f64>], queries: &[Vec<f64>]) -> Vec<usize> {
    queries
        .iter()
        .map(|q| {
            let mut best = 0;
            for c in 1..protos.len() {
                if sq_dist(q, &protos[c]) < sq_dist(q, &protos[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Training form: cross-entropy over negative squared distances to the
/// prototypes of `support` (`[S, d]`), for `query` (`[Q, d]`).
pub fn protonet_loss(
    g: &mut Graph,
    support: Var,
    support_labels: &[usize],
    query: Var,
    query_labels: &[usize],
    way: usize,
) -> std::result::Result<Var, TensorError> {
    let s = g.shape(support)[0];
    let mut avg = Tensor::zeros(&[way, s]);
    let mut counts = vec![0.0; way];
    support_labels.iter().for_each(|&c| counts[c] += 1.0);
    for (i, &c) in support_labels.iter().enumerate() {
        avg.data_mut()[c * s + i] = 1.0 / counts[c];
    }
    let avg = g.constant(avg);
    let protos = g.matmul(avg, support)?;
    let pt = g.transpose(protos)?;
    let cross = g.matmul(query, pt)?;
    let cross2 = g.scale(cross, 2.0)?;
    let pp = g.mul(protos, protos)?;
    let d = g.shape(protos)[1];
    let pn = g.sum_to(pp, &[way, 1])?;
    let pn = g.reshape(pn, &[1, way])?;
    let qq = g.mul(query, query)?;
    let qn = g.sum_to(qq, &[g.shape(query)[0], 1])?;
    debug_assert_eq!(g.shape(query)[1], d);
    let t = g.sub(cross2, pn)?;
    let neg = g.sub(t, qn)?;
    g.cross_entropy(neg, query_labels)
}

/// Classifier weight `[d, way]` with column `c = 2 p_c` and bias `-‖p_c‖²`.
pub fn protomaml_init(protos: &[Vec<f64>]) -> (Tensor, Tensor) {
    let way = protos.len();
    let d = protos.first().map_or(0, Vec::len);
    let mut w = Tensor::zeros(&[d, way]);
    for (c, p) in protos.iter().enumerate() {
        for (i, v) in p.iter().enumerate() {
            w.data_mut()[i * way + c] = 2.0 * v;
        }
    }
    let b = Tensor::vector(protos.iter().map(|p| -p.iter().map(|v| v * v).sum::<f64>()).collect());
    (w, b)
}

/// Scaled cosine logits: `scale · l2n(h) · l2n(rows of w)ᵀ`.
pub fn cosine_logits(g: &mut Graph, h: Var, w_rows: Var, scale: Var) -> std::result::Result<Var, TensorError> {
    let hn = g.l2_normalize(h)?;
    let wn = g.l2_normalize(w_rows)?;
    let wt = g.transpose(wn)?;
    let cos = g.matmul(hn, wt)?;
    g.mul(cos, scale)
}

/// Episode whose items index into a shared embedding table.
fn episode_inputs(head: &Head, table: &[StreamEmbeddings], items: &[(usize, usize)]) -> (HeadInput, Vec<usize>) {
    let embs: Vec<&StreamEmbeddings> = items.iter().map(|(i, _)| &table[*i]).collect();
    (head.input(&embs), items.iter().map(|p| p.1).collect())
}

fn finetune_head(head: &Head, input: &HeadInput, labels: &[usize], p: &TestProtocol) -> Result<Head> {
    let theta = gradient_descent(&head.theta, p.finetune_lr, p.finetune_epochs, |g, v| head.loss(g, v, input, labels))?;
    Ok(Head {
        config: head.config.clone(),
        theta,
    })
}

fn baselinepp_episode(
    head: &Head,
    support: &HeadInput,
    s_labels: &[usize],
    query: &HeadInput,
    p: &TestProtocol,
    r: &mut Rng,
) -> Result<Vec<usize>> {
    let (wi, _) = head.classifier_index();
    let feature = head.config.feature_dim();
    let mut theta: Vec<Tensor> = head.theta[..wi].to_vec();
    let n_body = theta.len();
    theta.push(Tensor::randn(&[p.way, feature], 1.0 / (feature as f64).sqrt(), r));
    theta.push(Tensor::vector(vec![p.cosine_scale]));
    let logits_of = |g: &mut Graph, v: &[Var], input: &HeadInput| {
        let h = head.representation(g, v, input)?;
        cosine_logits(g, h, v[n_body], v[n_body + 1])
    };
    let theta = gradient_descent(&theta, p.finetune_lr, p.finetune_epochs, |g, v| {
        let l = logits_of(g, v, support)?;
        g.cross_entropy(l, s_labels)
    })?;
    let mut g = Graph::new();
    let vars: Vec<Var> = theta.iter().map(|t| g.constant(t.clone())).collect();
    let l = logits_of(&mut g, &vars, query)?;
    Ok(argmax_rows(g.value(l)))
}

/// Top-1 accuracy on the queries of one labeled episode. `head` is never
/// modified; every adaptation happens on a copy.
pub fn run_episode(
    head: &Head,
    table: &[StreamEmbeddings],
    ep: &Episode<usize>,
    p: &TestProtocol,
    episode_index: usize,
) -> Result<f64> {
    let local = head.with_way(ep.way);
    let (support, s_labels) = episode_inputs(&local, table, &ep.support);
    let (query, q_labels) = episode_inputs(&local, table, &ep.query);
    let pred = match p.learner {
        Learner::Maml => finetune_head(&local, &support, &s_labels, p)?.predict(&query)?,
        Learner::Protonet => {
            let protos = prototypes(&local.embed(&support)?, &s_labels, ep.way)?;
            protonet_predict(&protos, &local.embed(&query)?)
        }
        Learner::Protomaml => {
            let protos = prototypes(&local.embed(&support)?, &s_labels, ep.way)?;
            let (w, b) = protomaml_init(&protos);
            let mut init = local.clone();
            let (wi, bi) = init.classifier_index();
            init.theta[wi] = w;
            match bi {
                Some(bi) => init.theta[bi] = b,
                None => return Err(MetaError::Config("protomaml needs a classifier bias".into())),
            }
            finetune_head(&init, &support, &s_labels, p)?.predict(&query)?
        }
        Learner::Baselinepp => {
            let mut r = rng::derive(p.seed, &[0x4250_5050, episode_index as u64]);
            baselinepp_episode(&local, &support, &s_labels, &query, p, &mut r)?
        }
    };
    Ok(fraction_correct(&pred, &q_labels))
}

/// Per-episode accuracies, split over `threads` workers. The result does
/// not depend on the worker count.
pub fn meta_test(
    head: &Head,
    table: &[StreamEmbeddings],
    episodes: &[Episode<usize>],
    p: &TestProtocol,
    threads: usize,
) -> Result<Vec<f64>> {
    p.validate()?;
    if head.config.kind != HeadKind::A3m && p.learner == Learner::Protomaml && !head.config.classifier_bias {
        return Err(MetaError::Config("protomaml needs a classifier bias".into()));
    }
    let threads = threads.clamp(1, episodes.len().max(1));
    let chunk = episodes.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = episodes
            .chunks(chunk)
            .enumerate()
            .map(|(k, eps)| {
                s.spawn(move || {
                    eps.iter()
                        .enumerate()
                        .map(|(j, e)| run_episode(head, table, e, p, k * chunk + j))
                        .collect::<Result<Vec<f64>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("episode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(episodes.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean accuracy and 95% half-width, both in percent.
pub fn accuracy_ci(per_episode: &[f64]) -> Result<(f64, f64)> {
    let n = per_episode.len();
    if n < 2 {
        return Err(MetaError::Empty("a confidence interval needs at least two episodes"));
    }
    let mean = per_episode.iter().sum::<f64>() / n as f64;
    let var = per_episode.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean * 100.0, 1.96 * var.sqrt() / (n as f64).sqrt() * 100.0))
}

pub fn format_ci(mean: f64, halfwidth: f64) -> String {
    format!("{mean:.2} ± {halfwidth:.2}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub mean_acc: f64,
    pub ci95: f64,
    pub learner: String,
    pub head: String,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "way,shot,episodes,mean_acc,ci95,learner,head,seed,config_digest";

    pub fn summary(&self) -> String {
        format_ci(self.mean_acc, self.ci95)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{},{},{},{}",
            self.way, self.shot, self.episodes, self.mean_acc, self.ci95, self.learner, self.head, self.seed, self.config_digest
        )
    }
}
