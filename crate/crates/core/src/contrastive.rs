//! Contrastive objectives and the two-stream pretraining loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::streams::{self, BoundMlp, TwoStream};
use crate::synthvid::{AugmentationConfig, Frames, SamplingScheme, SynthError, VideoTensor};
use crate::tensor::{Graph, LrSchedule, OptimizerKind, OptimizerState, Result, Tensor, TensorError, Var};

/// Additive mask that removes self-similarity from the softmax.
const SELF_MASK: f64 = -1e9;
pub const SKL_EPS: f64 = 1e-12;

fn invalid(op: &'static str, msg: String) -> TensorError {
    TensorError::Invalid { op, msg }
}

/// Similarity logits `sim(z_i, z_k) / τ` with the diagonal masked out.
pub fn matching_logits(g: &mut Graph, z: Var, tau: f64) -> Result<Var> {
    let s = g.shape(z).to_vec();
    if s.len() != 2 || s[0] < 2 || !s[0].is_multiple_of(2) {
        return Err(invalid("nt_xent", format!("expects [2N, d] with N >= 1, got {s:?}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("nt_xent", format!("temperature must be positive, got {tau}")));
    }
    let d = s[1];
    if let Some(i) = g
        .value(z)
        .data()
        .chunks(d)
        .position(|r| r.iter().all(|&v| v == 0.0))
    {
        return Err(invalid("nt_xent", format!("row {i} has zero norm")));
    }
    let n = s[0];
    let norm = g.row_norm(z)?;
    let inv = g.recip(norm)?;
    let zn = g.mul(z, inv)?;
    let znt = g.transpose(zn)?;
    let sim = g.matmul(zn, znt)?;
    let logits = g.scale(sim, 1.0 / tau)?;
    let mut mask = Tensor::zeros(&[n, n]);
    (0..n).for_each(|i| mask.data_mut()[i * n + i] = SELF_MASK);
    let mask = g.constant(mask);
    g.add(logits, mask)
}

/// Mean NT-Xent over all `2N` anchors; rows `2k` and `2k+1` are positives.
pub fn nt_xent(g: &mut Graph, z: Var, tau: f64) -> Result<Var> {
    let logits = matching_logits(g, z, tau)?;
    let n = g.shape(z)[0];
    let targets: Vec<usize> = (0..n).map(|i| i ^ 1).collect();
    g.cross_entropy(logits, &targets)
}

/// Row-wise positive-matching probabilities.
pub fn matching_distribution(g: &mut Graph, z: Var, tau: f64) -> Result<Var> {
    let logits = matching_logits(g, z, tau)?;
    g.softmax(logits)
}

/// `(L_ap, L_act)` for two batches over the same videos.
pub fn stream_losses(g: &mut Graph, z_ap: Var, z_act: Var, tau: f64) -> Result<(Var, Var)> {
    let (a, b) = (g.shape(z_ap)[0], g.shape(z_act)[0]);
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op: "stream_losses",
            lhs: g.shape(z_ap).to_vec(),
            rhs: g.shape(z_act).to_vec(),
        });
    }
    Ok((nt_xent(g, z_ap, tau)?, nt_xent(g, z_act, tau)?))
}

/// NT-Xent over projections of `[h_ap_mean | h_act]`.
pub fn joint_loss(g: &mut Graph, h_ap_mean: Var, h_act: Var, head: &BoundMlp, tau: f64) -> Result<Var> {
    let cat = g.concat(&[h_ap_mean, h_act], 1)?;
    let z = streams::project(g, head, cat)?;
    nt_xent(g, z, tau)
}

/// Mean over rows of `KL(p‖q) + KL(q‖p)`.
pub fn symmetric_kl(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    if g.shape(p) != g.shape(q) || g.shape(p).len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "symmetric_kl",
            lhs: g.shape(p).to_vec(),
            rhs: g.shape(q).to_vec(),
        });
    }
    let rows = g.shape(p)[0];
    let pe = g.add_scalar(p, SKL_EPS)?;
    let qe = g.add_scalar(q, SKL_EPS)?;
    let lp = g.log(pe)?;
    let lq = g.log(qe)?;
    let dp = g.sub(p, q)?;
    let dl = g.sub(lp, lq)?;
    let prod = g.mul(dp, dl)?;
    let total = g.sum_all(prod)?;
    g.scale(total, 1.0 / rows as f64)
}

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid pretraining config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: TensorError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub tau: f64,
    pub appearance_scheme: SamplingScheme,
    pub action_scheme: SamplingScheme,
    pub augment: AugmentationConfig,
    /// Reuse one spatial draw for the appearance and action views of a video.
    pub shared_spatial_draw: bool,
    pub joint_loss: bool,
    pub skl_loss: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            peak_lr: 0.01,
            final_lr: 1e-5,
            warmup_epochs: 2,
            momentum: 0.9,
            tau: 0.1,
            appearance_scheme: SamplingScheme::frames_per_segment(8),
            action_scheme: SamplingScheme::clips(4, 4),
            augment: AugmentationConfig::default(),
            shared_spatial_draw: false,
            joint_loss: false,
            skl_loss: false,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> std::result::Result<(), ContrastiveError> {
        let bad = |m: String| Err(ContrastiveError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.warmup_epochs > self.epochs {
            return bad("warmup longer than training".into());
        }
        self.appearance_scheme.validate()?;
        self.action_scheme.validate()?;
        self.augment.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss_ap: f64,
    pub loss_act: f64,
    pub loss_joint: f64,
    pub loss_skl: f64,
    pub lr: f64,
}

/// Per-epoch CSV; the joint and SKL columns appear only when those losses
/// are enabled.
pub fn log_csv(rows: &[LogRow], joint: bool, skl: bool) -> String {
    let mut s = String::from("epoch,loss_ap,loss_act");
    if joint {
        s += ",loss_joint";
    }
    if skl {
        s += ",loss_skl";
    }
    s += ",lr\n";
    for r in rows {
        s += &format!("{},{:.9},{:.9}", r.epoch, r.loss_ap, r.loss_act);
        if joint {
            s += &format!(",{:.9}", r.loss_joint);
        }
        if skl {
            s += &format!(",{:.9}", r.loss_skl);
        }
        s += &format!(",{:.9}\n", r.lr);
    }
    s
}

const TAG_SHUFFLE: u64 = 0x5348_5546;
const TAG_VIEWS: u64 = 0x5649_4557;

/// Two appearance and two action views of `v`, drawn from one per-call rng.
pub fn training_views(
    v: &VideoTensor,
    cfg: &PretrainConfig,
    rng: &mut rng::Rng,
) -> std::result::Result<([Frames; 2], [Frames; 2]), SynthError> {
    let mut app = Vec::with_capacity(2);
    let mut act = Vec::with_capacity(2);
    for _ in 0..2 {
        if cfg.shared_spatial_draw {
            let ia = cfg.appearance_scheme.sample_indices(v.t, rng)?;
            let ic = cfg.action_scheme.sample_indices(v.t, rng)?;
            let fa = v.pick(&ia);
            let p = cfg.augment.draw(&fa, cfg.appearance_scheme.resolution(), rng);
            let mut pc = p.clone();
            pc.out = cfg.action_scheme.resolution();
            app.push(crate::synthvid::augment::apply(&fa, &p));
            act.push(crate::synthvid::augment::apply(&v.pick(&ic), &pc));
        } else {
            app.push(v.view(&cfg.appearance_scheme, &cfg.augment, rng)?);
            act.push(v.view(&cfg.action_scheme, &cfg.augment, rng)?);
        }
    }
    let (a1, a0) = (app.pop().unwrap(), app.pop().unwrap());
    let (c1, c0) = (act.pop().unwrap(), act.pop().unwrap());
    Ok(([a0, a1], [c0, c1]))
}

struct StepLosses {
    total: Var,
    ap: f64,
    act: f64,
    joint: f64,
    skl: f64,
}

fn batch_losses(
    g: &mut Graph,
    bound: &streams::BoundTwoStream,
    app: &[&Frames],
    act: &[&Frames],
    cfg: &PretrainConfig,
    f: usize,
) -> Result<StepLosses> {
    let xa = g.constant(streams::appearance_input(app));
    let xc = g.constant(streams::action_input(act));
    let (_, h_ap) = streams::encode_appearance(g, &bound.appearance, xa, f)?;
    let h_act = streams::encode_action(g, &bound.action, xc)?;
    let z_ap = streams::project(g, &bound.proj_ap, h_ap)?;
    let z_act = streams::project(g, &bound.proj_act, h_act)?;
    let (l_ap, l_act) = stream_losses(g, z_ap, z_act, cfg.tau)?;
    let mut total = g.add(l_ap, l_act)?;
    let mut joint = 0.0;
    let mut skl = 0.0;
    if cfg.joint_loss {
        let head = bound
            .proj_joint
            .as_ref()
            .ok_or_else(|| invalid("pretrain", "joint loss enabled without a joint head".into()))?;
        let lj = joint_loss(g, h_ap, h_act, head, cfg.tau)?;
        joint = g.value(lj).item()?;
        total = g.add(total, lj)?;
    }
    if cfg.skl_loss {
        let p = matching_distribution(g, z_ap, cfg.tau)?;
        let q = matching_distribution(g, z_act, cfg.tau)?;
        let ls = symmetric_kl(g, p, q)?;
        skl = g.value(ls).item()?;
        total = g.add(total, ls)?;
    }
    Ok(StepLosses {
        ap: g.value(l_ap).item()?,
        act: g.value(l_act).item()?,
        joint,
        skl,
        total,
    })
}

/// Train `model` in place on `videos`; returns one log row per epoch.
pub fn pretrain(
    model: &mut TwoStream,
    videos: &[&VideoTensor],
    cfg: &PretrainConfig,
) -> std::result::Result<Vec<LogRow>, ContrastiveError> {
    cfg.validate()?;
    if cfg.joint_loss && model.proj_joint.is_none() {
        return Err(ContrastiveError::Config("joint loss needs a model built with joint_head".into()));
    }
    if cfg.appearance_scheme.frame_count() != model.config.appearance_frames
        || cfg.action_scheme.frame_count() != model.config.action_frames
    {
        return Err(ContrastiveError::Config(
            "sampling schemes do not match the encoder frame counts".into(),
        ));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if videos.len() < 2 {
        return Err(ContrastiveError::Config(format!(
            "need at least 2 training videos, got {}",
            videos.len()
        )));
    }
    let batches_per_epoch = videos.len() / cfg.batch_size.min(videos.len());
    let batch = videos.len() / batches_per_epoch;
    let total_steps = cfg.epochs * batches_per_epoch;
    let schedule = LrSchedule::warmup_cosine(
        cfg.peak_lr,
        cfg.final_lr,
        cfg.warmup_epochs * batches_per_epoch,
        total_steps,
    );
    schedule.validate()?;
    let mut opt = {
        let params = model.params_mut();
        let refs: Vec<&Tensor> = params.iter().map(|p| &**p).collect();
        OptimizerState::new(OptimizerKind::sgd(cfg.momentum), &refs)
    };
    let f = model.config.appearance_frames;
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::derive(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut sums = [0.0; 4];
        let mut lr = 0.0;
        for b in 0..batches_per_epoch {
            let mut app = Vec::with_capacity(2 * batch);
            let mut act = Vec::with_capacity(2 * batch);
            for &i in &order[b * batch..(b + 1) * batch] {
                let v = videos[i];
                let mut r = rng::derive(cfg.seed, &[TAG_VIEWS, epoch as u64, v.video_id]);
                let (a, c) = training_views(v, cfg, &mut r)?;
                app.extend(a);
                act.extend(c);
            }
            let app_refs: Vec<&Frames> = app.iter().collect();
            let act_refs: Vec<&Frames> = act.iter().collect();
            let diverged = |source| ContrastiveError::Diverged { epoch, step, source };
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let losses = batch_losses(&mut g, &bound, &app_refs, &act_refs, cfg, f).map_err(diverged)?;
            let grads = g.backward(losses.total).map_err(diverged)?;
            let vars = bound.vars();
            let grad_refs: Vec<&Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            lr = schedule.lr_at(step)?;
            let mut params = model.params_mut();
            opt.step(&mut params, &grad_refs, lr)?;
            sums[0] += losses.ap;
            sums[1] += losses.act;
            sums[2] += losses.joint;
            sums[3] += losses.skl;
            step += 1;
        }
        let n = batches_per_epoch as f64;
        log.push(LogRow {
            epoch: epoch + 1,
            loss_ap: sums[0] / n,
            loss_act: sums[1] / n,
            loss_joint: sums[2] / n,
            loss_skl: sums[3] / n,
            lr,
        });
        log::debug!(
            "epoch {} loss_ap {:.4} loss_act {:.4} lr {:.5}",
            epoch + 1,
            sums[0] / n,
            sums[1] / n,
            lr
        );
    }
    Ok(log)
}
