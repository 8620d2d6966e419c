//! Hard-instance mining and episode construction.
//!
//! Encoders are frozen after pretraining, so augmented views are embedded
//! once into a [`ViewBank`]. Every later "fresh augmentation" is a draw of
//! distinct bank entries for a video.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Rng};
use crate::streams::{StreamEmbeddings, TwoStream};
use crate::synthvid::{AugmentationConfig, SamplingScheme, SynthError, VideoTensor};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error("need at least {needed} items, have {have}: {what}")]
    TooFew {
        what: &'static str,
        needed: usize,
        have: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

type Result<T> = std::result::Result<T, MiningError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Hard instances kept per stream.
    pub n: usize,
    pub mining_batch: usize,
    pub exploration_fraction: f64,
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            n: 32,
            mining_batch: 256,
            exploration_fraction: 0.10,
            way: 5,
            shots: 1,
            queries: 1,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MiningError::Config(m));
        if self.way < 2 {
            return bad(format!("way must be at least 2, got {}", self.way));
        }
        if self.n < self.way {
            return bad(format!("n = {} is smaller than way = {}", self.n, self.way));
        }
        if self.mining_batch < 2 * self.n {
            return bad(format!(
                "mining_batch = {} is smaller than 2n = {}",
                self.mining_batch,
                2 * self.n
            ));
        }
        if !(self.exploration_fraction >= 0.0 && self.exploration_fraction.is_finite()) {
            return bad(format!("exploration_fraction {} is negative", self.exploration_fraction));
        }
        if self.shots == 0 || self.queries == 0 {
            return bad("shots and queries must be positive".into());
        }
        Ok(())
    }
}

/// Precomputed embeddings of augmented views, `entries[i][j]` is view `j` of
/// video `i`.
#[derive(Clone, Debug)]
pub struct ViewBank {
    pub video_ids: Vec<u64>,
    pub entries: Vec<Vec<StreamEmbeddings>>,
}

const TAG_BANK: u64 = 0x4241_4e4b;
const TAG_PLAIN: u64 = 0x504c_4149;
const EMBED_CHUNK: usize = 64;

fn embed_views(
    model: &TwoStream,
    videos: &[&VideoTensor],
    app: &SamplingScheme,
    act: &SamplingScheme,
    aug: &AugmentationConfig,
    mut rng_for: impl FnMut(&VideoTensor) -> Rng,
) -> Result<Vec<StreamEmbeddings>> {
    let mut out = Vec::with_capacity(videos.len());
    for chunk in videos.chunks(EMBED_CHUNK) {
        let mut a = Vec::with_capacity(chunk.len());
        let mut c = Vec::with_capacity(chunk.len());
        for v in chunk {
            let mut r = rng_for(v);
            a.push(v.view(app, aug, &mut r)?);
            c.push(v.view(act, aug, &mut r)?);
        }
        let ar: Vec<_> = a.iter().collect();
        let cr: Vec<_> = c.iter().collect();
        out.extend(model.embed(&ar, &cr)?);
    }
    Ok(out)
}

impl ViewBank {
    /// Embed `views` independently augmented views of every video.
    pub fn build(
        model: &TwoStream,
        videos: &[&VideoTensor],
        views: usize,
        app: &SamplingScheme,
        act: &SamplingScheme,
        aug: &AugmentationConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut entries: Vec<Vec<StreamEmbeddings>> = vec![Vec::with_capacity(views); videos.len()];
        for j in 0..views {
            let embs = embed_views(model, videos, app, act, aug, |v| {
                rng::derive(seed, &[TAG_BANK, v.video_id, j as u64])
            })?;
            for (slot, e) in entries.iter_mut().zip(embs) {
                slot.push(e);
            }
        }
        Ok(Self {
            video_ids: videos.iter().map(|v| v.video_id).collect(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn views_per_video(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// `k` distinct view indices of one video.
    pub fn draw_views(&self, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let b = self.views_per_video();
        if k > b {
            return Err(MiningError::TooFew {
                what: "bank views per video",
                needed: k,
                have: b,
            });
        }
        Ok(index::sample(rng, b, k).into_vec())
    }
}

/// One non-augmented view per video (temporal sampling still random, from a
/// per-video stream).
pub fn embed_plain(
    model: &TwoStream,
    videos: &[&VideoTensor],
    app: &SamplingScheme,
    act: &SamplingScheme,
    seed: u64,
) -> Result<Vec<StreamEmbeddings>> {
    let aug = AugmentationConfig::identity();
    embed_views(model, videos, app, act, &aug, |v| rng::derive(seed, &[TAG_PLAIN, v.video_id]))
}

/// Per-video augmentation agreement in each stream, aligned with `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamScores {
    pub video_ids: Vec<u64>,
    pub appearance: Vec<f64>,
    pub action: Vec<f64>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity between two augmentations of each video, per stream.
/// The two streams draw their augmentation pairs independently.
pub fn agreement_scores(bank: &ViewBank, indices: &[usize], rng: &mut Rng) -> Result<StreamScores> {
    if indices.len() < 2 {
        return Err(MiningError::TooFew {
            what: "videos in the mining batch",
            needed: 2,
            have: indices.len(),
        });
    }
    let mut out = StreamScores {
        video_ids: Vec::with_capacity(indices.len()),
        appearance: Vec::with_capacity(indices.len()),
        action: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        let e = &bank.entries[i];
        let pa = bank.draw_views(2, rng)?;
        let pc = bank.draw_views(2, rng)?;
        out.video_ids.push(bank.video_ids[i]);
        out.appearance.push(cosine(&e[pa[0]].h_ap_mean, &e[pa[1]].h_ap_mean));
        out.action.push(cosine(&e[pc[0]].h_act, &e[pc[1]].h_act));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectedBy {
    Appearance,
    Action,
    Both,
    Exploration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub video_id: u64,
    pub score_ap: f64,
    pub score_act: f64,
    pub selected_by: SelectedBy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardPool {
    /// Base members in ascending id order, then exploration extras.
    pub members: Vec<PoolMember>,
}

impl HardPool {
    pub fn ids(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.video_id).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.members).expect("pool serializes")
    }
}

/// Positions of the `n` lowest scores; ties go to the lower video id.
pub fn lowest_n(scores: &[f64], ids: &[u64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let key = |i: usize| (scores[i], ids[i]);
    let n = n.min(order.len());
    if n == 0 {
        return Vec::new();
    }
    order.select_nth_unstable_by(n - 1, |&a, &b| {
        let (sa, ia) = key(a);
        let (sb, ib) = key(b);
        sa.total_cmp(&sb).then(ia.cmp(&ib))
    });
    order.truncate(n);
    order
}

pub fn mine_hard(scores: &StreamScores, cfg: &MiningConfig, rng: &mut Rng) -> Result<HardPool> {
    let m = scores.video_ids.len();
    if cfg.n > m {
        return Err(MiningError::TooFew {
            what: "scored videos for n hard instances",
            needed: cfg.n,
            have: m,
        });
    }
    let ap: BTreeSet<usize> = lowest_n(&scores.appearance, &scores.video_ids, cfg.n).into_iter().collect();
    let act: BTreeSet<usize> = lowest_n(&scores.action, &scores.video_ids, cfg.n).into_iter().collect();
    let mut base: Vec<usize> = ap.union(&act).copied().collect();
    base.sort_by_key(|&i| scores.video_ids[i]);
    let member = |i: usize, by: SelectedBy| PoolMember {
        video_id: scores.video_ids[i],
        score_ap: scores.appearance[i],
        score_act: scores.action[i],
        selected_by: by,
    };
    let mut members: Vec<PoolMember> = base
        .iter()
        .map(|&i| {
            let by = match (ap.contains(&i), act.contains(&i)) {
                (true, true) => SelectedBy::Both,
                (true, false) => SelectedBy::Appearance,
                _ => SelectedBy::Action,
            };
            member(i, by)
        })
        .collect();
    let in_base: BTreeSet<usize> = base.iter().copied().collect();
    let rest: Vec<usize> = (0..m).filter(|i| !in_base.contains(i)).collect();
    let extras = ((cfg.exploration_fraction * base.len() as f64).ceil() as usize).min(rest.len());
    for k in index::sample(rng, rest.len(), extras).into_iter() {
        members.push(member(rest[k], SelectedBy::Exploration));
    }
    Ok(HardPool { members })
}

/// An N-way episode over items of type `T`; class indices are `0..way`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<T> {
    pub way: usize,
    pub support: Vec<(T, usize)>,
    pub query: Vec<(T, usize)>,
}

impl<T: PartialEq> Episode<T> {
    /// Distinct classes, full support coverage, disjoint support and query.
    pub fn check(&self, shots: usize, queries: usize) -> std::result::Result<(), String> {
        for c in 0..self.way {
            let s = self.support.iter().filter(|(_, y)| *y == c).count();
            let q = self.query.iter().filter(|(_, y)| *y == c).count();
            if s != shots || q != queries {
                return Err(format!("class {c}: {s} support and {q} query items"));
            }
        }
        if self.support.iter().chain(&self.query).any(|(_, y)| *y >= self.way) {
            return Err("class index out of range".into());
        }
        for (item, _) in &self.query {
            if self.support.iter().any(|(s, _)| s == item) {
                return Err("query item also in support".into());
            }
        }
        Ok(())
    }
}

/// A bank entry: video position in the bank and view index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BankItem {
    pub video: usize,
    pub view: usize,
}

/// Instance episodes: `way` distinct pool videos, each its own class, with
/// distinct bank views for support and query.
pub fn build_instance_episodes(
    bank: &ViewBank,
    pool: &[usize],
    cfg: &MiningConfig,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Episode<BankItem>>> {
    if pool.len() < cfg.way {
        return Err(MiningError::TooFew {
            what: "pool videos for one episode",
            needed: cfg.way,
            have: pool.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let chosen: Vec<usize> = pool.choose_multiple(rng, cfg.way).copied().collect();
        let mut support = Vec::with_capacity(cfg.way * cfg.shots);
        let mut query = Vec::with_capacity(cfg.way * cfg.queries);
        for (class, &video) in chosen.iter().enumerate() {
            let views = bank.draw_views(cfg.shots + cfg.queries, rng)?;
            let (s, q) = views.split_at(cfg.shots);
            support.extend(s.iter().map(|&view| (BankItem { video, view }, class)));
            query.extend(q.iter().map(|&view| (BankItem { video, view }, class)));
        }
        out.push(Episode {
            way: cfg.way,
            support,
            query,
        });
    }
    Ok(out)
}

/// Labeled episodes over `labels[i]` (class of test video `i`); items are
/// indices into `labels`. One query per class.
pub fn sample_test_episodes(
    labels: &[usize],
    way: usize,
    shot: usize,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<Episode<usize>>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = by_class.values().filter(|v| v.len() > shot).collect();
    if way < 1 || shot < 1 {
        return Err(MiningError::Config(format!("way {way} and shot {shot} must be positive")));
    }
    if eligible.len() < way {
        return Err(MiningError::TooFew {
            what: "novel classes with shot + 1 videos",
            needed: way,
            have: eligible.len(),
        });
    }
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let classes = index::sample(rng, eligible.len(), way);
        let mut support = Vec::with_capacity(way * shot);
        let mut query = Vec::with_capacity(way);
        for (c, k) in classes.into_iter().enumerate() {
            let vids = eligible[k];
            let picks = index::sample(rng, vids.len(), shot + 1);
            let mut it = picks.into_iter();
            for _ in 0..shot {
                support.push((vids[it.next().unwrap()], c));
            }
            query.push((vids[it.next().unwrap()], c));
        }
        out.push(Episode { way, support, query });
    }
    Ok(out)
}

/// Uniformly random mining batch of `m` distinct bank positions.
pub fn sample_mining_batch(bank_len: usize, m: usize, rng: &mut Rng) -> Vec<usize> {
    let m = m.min(bank_len);
    let mut v = index::sample(rng, bank_len, m).into_vec();
    v.sort_unstable();
    v
}

/// Uniformly random episodes from the whole bank, without mining.
pub fn random_pool(bank_len: usize, size: usize, rng: &mut Rng) -> Vec<usize> {
    sample_mining_batch(bank_len, size, rng)
}
