//! Flat `section.key = value` run configuration.
//!
//! Every key has a default and a type. Loading rejects unknown keys and
//! values that do not parse; values are stored in canonical form so the
//! digest only depends on the effective settings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use muvfs_core::a3m::{HeadConfig, HeadKind};
use muvfs_core::contrastive::PretrainConfig;
use muvfs_core::metalearn::{EpisodeSource, Learner, MetaConfig, Order, TestProtocol};
use muvfs_core::mining::MiningConfig;
use muvfs_core::streams::StreamConfig;
use muvfs_core::synthvid::{AugmentationConfig, GenerateSpec, Resolution, SamplingScheme};

use crate::error::CliError;

#[derive(Clone, Copy, Debug)]
enum Kind {
    Int,
    Float,
    Bool,
    /// Comma-separated positive integers.
    IntList,
    Choice(&'static [&'static str]),
    Scheme,
    Text,
}

struct KeyDef {
    key: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn k(key: &'static str, default: &'static str, kind: Kind) -> KeyDef {
    KeyDef { key, default, kind }
}

const ABLATIONS: &[&str] = &[
    "none",
    "action-only",
    "appearance-only",
    "concat-no-a3m",
    "no-hard-episodes",
];
const LEARNERS: &[&str] = &["maml", "protonet", "protomaml", "baselinepp"];
const LABELS: &[&str] = &["joint", "motion", "appearance"];
const ORDERS: &[&str] = &["first", "second"];

#[rustfmt::skip]
const KEYS: &[KeyDef] = &[
    k("seed", "0", Kind::Int),
    k("ablation", "none", Kind::Choice(ABLATIONS)),
    k("paths.dataset", "", Kind::Text),
    k("paths.pretrained", "", Kind::Text),
    k("paths.meta", "", Kind::Text),
    k("data.appearance_classes", "8", Kind::Int),
    k("data.motion_classes", "8", Kind::Int),
    k("data.videos_per_class", "24", Kind::Int),
    k("data.frames", "32", Kind::Int),
    k("data.channels", "3", Kind::Int),
    k("data.height", "32", Kind::Int),
    k("data.width", "32", Kind::Int),
    k("data.noise_std", "0.03", Kind::Float),
    k("sampling.appearance", "8x1", Kind::Scheme),
    k("sampling.action", "4x4", Kind::Scheme),
    k("sampling.appearance_res", "16", Kind::Int),
    k("sampling.action_res", "8", Kind::Int),
    k("augment.crop_scale_min", "0.5", Kind::Float),
    k("augment.crop_scale_max", "1", Kind::Float),
    k("augment.crop_ratio_min", "0.75", Kind::Float),
    k("augment.crop_ratio_max", "1.3333333333333333", Kind::Float),
    k("augment.hflip_prob", "0.5", Kind::Float),
    k("augment.jitter_prob", "0.8", Kind::Float),
    k("augment.jitter_strength", "0.4", Kind::Float),
    k("augment.grayscale_prob", "0.2", Kind::Float),
    k("augment.blur_prob", "0.5", Kind::Float),
    k("augment.shared_spatial_draw", "false", Kind::Bool),
    k("model.hidden", "256,256", Kind::IntList),
    k("model.embed_dim", "64", Kind::Int),
    k("model.proj_hidden", "128", Kind::Int),
    k("model.proj_dim", "128", Kind::Int),
    k("pretrain.epochs", "30", Kind::Int),
    k("pretrain.batch_size", "64", Kind::Int),
    k("pretrain.peak_lr", "0.01", Kind::Float),
    k("pretrain.final_lr", "0.00001", Kind::Float),
    k("pretrain.warmup_epochs", "2", Kind::Int),
    k("pretrain.momentum", "0.9", Kind::Float),
    k("pretrain.tau", "0.1", Kind::Float),
    k("pretrain.joint_loss", "false", Kind::Bool),
    k("pretrain.skl_loss", "false", Kind::Bool),
    k("head.d_k", "16", Kind::Int),
    k("head.d_v", "64", Kind::Int),
    k("head.classifier_bias", "true", Kind::Bool),
    k("mining.n", "32", Kind::Int),
    k("mining.batch", "256", Kind::Int),
    k("mining.exploration_fraction", "0.1", Kind::Float),
    k("mining.way", "5", Kind::Int),
    k("mining.shots", "1", Kind::Int),
    k("mining.queries", "1", Kind::Int),
    k("mining.bank_views", "4", Kind::Int),
    k("meta.alpha", "1", Kind::Float),
    k("meta.beta", "0.0003", Kind::Float),
    k("meta.episodes_per_iter", "10", Kind::Int),
    k("meta.iterations", "300", Kind::Int),
    k("meta.inner_steps", "1", Kind::Int),
    k("meta.order", "first", Kind::Choice(ORDERS)),
    k("meta.final_lr_fraction", "0.1", Kind::Float),
    k("eval.learner", "maml", Kind::Choice(LEARNERS)),
    k("eval.ways", "5", Kind::IntList),
    k("eval.shot", "1", Kind::Int),
    k("eval.episodes", "10000", Kind::Int),
    k("eval.finetune_lr", "10", Kind::Float),
    k("eval.finetune_epochs", "50", Kind::Int),
    k("eval.cosine_scale", "10", Kind::Float),
    k("eval.labels", "joint", Kind::Choice(LABELS)),
    k("gradcheck.seeds", "3", Kind::Int),
    k("gradcheck.only", "", Kind::Text),
    k("gradcheck.inject_fault", "", Kind::Text),
];

fn def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

fn canonical(d: &KeyDef, raw: &str) -> Result<String, String> {
    let v = raw.trim();
    let bad = |what: &str| format!("`{}`: expected {what}, got `{v}`", d.key);
    Ok(match d.kind {
        Kind::Int => v
            .parse::<u64>()
            .map_err(|_| bad("a non-negative integer"))?
            .to_string(),
        Kind::Float => {
            let x = v.parse::<f64>().map_err(|_| bad("a number"))?;
            if !x.is_finite() {
                return Err(bad("a finite number"));
            }
            format!("{x:?}")
        }
        Kind::Bool => match v {
            "true" | "yes" | "1" => "true".into(),
            "false" | "no" | "0" => "false".into(),
            _ => return Err(bad("true or false")),
        },
        Kind::IntList => {
            let items: Result<Vec<u64>, _> =
                v.split(',').map(|s| s.trim().parse::<u64>()).collect();
            match items {
                Ok(xs) if !xs.is_empty() && xs.iter().all(|&x| x > 0) => {
                    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
                }
                _ => return Err(bad("a comma-separated list of positive integers")),
            }
        }
        Kind::Choice(options) => {
            if options.contains(&v) {
                v.to_string()
            } else {
                return Err(bad(&format!("one of {}", options.join("|"))));
            }
        }
        Kind::Scheme => {
            SamplingScheme::parse(v).map_err(|e| format!("`{}`: {e}", d.key))?;
            v.replace('×', "x").replace('→', "->")
        }
        Kind::Text => v.to_string(),
    })
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|d| (d.key, canonical(d, d.default).expect("valid default")))
            .collect();
        Self {
            values,
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Parse `key = value` lines. `#` starts a comment; a `[section]` line
    /// prefixes the following keys with `section.`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value)
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let d = def(key).ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        let v = canonical(d, value).map_err(CliError::Config)?;
        self.values.insert(d.key, v);
        self.explicit.insert(d.key);
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("no key {key}"))
    }

    /// Sorted `key = value` lines of every setting.
    pub fn canonical_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_text().as_bytes());
        hex::encode(hash)[..16].to_string()
    }

    fn int(&self, key: &str) -> usize {
        self.get(key).parse().expect("checked on load")
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("checked on load")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn list(&self, key: &str) -> Vec<usize> {
        self.get(key)
            .split(',')
            .map(|s| s.parse().expect("checked on load"))
            .collect()
    }

    fn text(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|s| !s.is_empty())
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("checked on load")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.set("seed", &seed.to_string()).expect("integer seed");
    }

    pub fn path(&self, key: &str) -> Option<&str> {
        self.text(key)
    }

    pub fn ablation(&self) -> &str {
        self.get("ablation")
    }

    pub fn generate_spec(&self) -> Result<GenerateSpec, CliError> {
        let spec = GenerateSpec {
            appearance_classes: self.int("data.appearance_classes"),
            motion_classes: self.int("data.motion_classes"),
            videos_per_class: self.int("data.videos_per_class"),
            frames: self.int("data.frames"),
            channels: self.int("data.channels"),
            height: self.int("data.height"),
            width: self.int("data.width"),
            noise_std: self.float("data.noise_std"),
            seed: self.seed(),
        };
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn schemes(&self) -> Result<(SamplingScheme, SamplingScheme), CliError> {
        let parse = |key: &str, res: usize| {
            SamplingScheme::parse(self.get(key))
                .map(|s| s.with_resolution(Resolution::square(res)))
                .map_err(|e| CliError::Config(format!("{key}: {e}")))
        };
        let app = parse("sampling.appearance", self.int("sampling.appearance_res"))?;
        let act = parse("sampling.action", self.int("sampling.action_res"))?;
        if !matches!(app, SamplingScheme::FramesPerSegment { .. })
            || !matches!(act, SamplingScheme::Clips { .. })
        {
            return Err(CliError::Config(
                "sampling.appearance must be a frames-per-segment scheme and sampling.action a clip scheme".into(),
            ));
        }
        for s in [&app, &act] {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok((app, act))
    }

    pub fn augmentation(&self) -> Result<AugmentationConfig, CliError> {
        let a = AugmentationConfig {
            crop_scale: (
                self.float("augment.crop_scale_min"),
                self.float("augment.crop_scale_max"),
            ),
            crop_ratio: (
                self.float("augment.crop_ratio_min"),
                self.float("augment.crop_ratio_max"),
            ),
            hflip_prob: self.float("augment.hflip_prob"),
            jitter_prob: self.float("augment.jitter_prob"),
            jitter_strength: self.float("augment.jitter_strength"),
            grayscale_prob: self.float("augment.grayscale_prob"),
            blur_prob: self.float("augment.blur_prob"),
        };
        a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(a)
    }

    pub fn stream_config(&self) -> Result<StreamConfig, CliError> {
        let (app, act) = self.schemes()?;
        let c = self.int("data.channels");
        let ar = self.int("sampling.appearance_res");
        let cr = self.int("sampling.action_res");
        let s = StreamConfig {
            appearance_frame_len: c * ar * ar,
            appearance_frames: app.frame_count(),
            action_frame_len: c * cr * cr,
            action_frames: act.frame_count(),
            hidden: self.list("model.hidden"),
            embed_dim: self.int("model.embed_dim"),
            proj_hidden: self.int("model.proj_hidden"),
            proj_dim: self.int("model.proj_dim"),
            joint_head: self.flag("pretrain.joint_loss"),
        };
        s.validate().map_err(CliError::Config)?;
        Ok(s)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig, CliError> {
        let (appearance_scheme, action_scheme) = self.schemes()?;
        let p = PretrainConfig {
            epochs: self.int("pretrain.epochs"),
            batch_size: self.int("pretrain.batch_size"),
            peak_lr: self.float("pretrain.peak_lr"),
            final_lr: self.float("pretrain.final_lr"),
            warmup_epochs: self.int("pretrain.warmup_epochs"),
            momentum: self.float("pretrain.momentum"),
            tau: self.float("pretrain.tau"),
            appearance_scheme,
            action_scheme,
            augment: self.augmentation()?,
            shared_spatial_draw: self.flag("augment.shared_spatial_draw"),
            joint_loss: self.flag("pretrain.joint_loss"),
            skl_loss: self.flag("pretrain.skl_loss"),
            seed: self.seed(),
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.ablation() {
            "action-only" => HeadKind::ActionOnly,
            "appearance-only" => HeadKind::AppearanceOnly,
            "concat-no-a3m" => HeadKind::Concat,
            _ => HeadKind::A3m,
        }
    }

    pub fn head_config(&self) -> Result<HeadConfig, CliError> {
        let h = HeadConfig {
            kind: self.head_kind(),
            embed_dim: self.int("model.embed_dim"),
            d_k: self.int("head.d_k"),
            d_v: self.int("head.d_v"),
            way: self.int("mining.way"),
            classifier_bias: self.flag("head.classifier_bias"),
        };
        h.validate().map_err(CliError::Config)?;
        Ok(h)
    }

    pub fn mining_config(&self) -> Result<MiningConfig, CliError> {
        let m = MiningConfig {
            n: self.int("mining.n"),
            mining_batch: self.int("mining.batch"),
            exploration_fraction: self.float("mining.exploration_fraction"),
            way: self.int("mining.way"),
            shots: self.int("mining.shots"),
            queries: self.int("mining.queries"),
        };
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let views = self.bank_views();
        if views < m.shots + m.queries || views < 2 {
            return Err(CliError::Config(format!(
                "mining.bank_views {views} must cover shots + queries and be at least 2"
            )));
        }
        Ok(m)
    }

    pub fn bank_views(&self) -> usize {
        self.int("mining.bank_views")
    }

    pub fn meta_config(&self) -> Result<MetaConfig, CliError> {
        let m = MetaConfig {
            alpha: self.float("meta.alpha"),
            beta: self.float("meta.beta"),
            episodes_per_iter: self.int("meta.episodes_per_iter"),
            iterations: self.int("meta.iterations"),
            inner_steps: self.int("meta.inner_steps"),
            order: if self.get("meta.order") == "second" {
                Order::Second
            } else {
                Order::First
            },
            final_lr_fraction: self.float("meta.final_lr_fraction"),
            source: if self.ablation() == "no-hard-episodes" {
                EpisodeSource::Random
            } else {
                EpisodeSource::Hard
            },
            seed: self.seed(),
        };
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }

    pub fn learner(&self) -> Learner {
        Learner::parse(self.get("eval.learner")).expect("checked on load")
    }

    pub fn ways(&self) -> Vec<usize> {
        self.list("eval.ways")
    }

    pub fn labels(&self) -> &str {
        self.get("eval.labels")
    }

    pub fn test_protocol(&self, way: usize) -> Result<TestProtocol, CliError> {
        let p = TestProtocol {
            finetune_lr: self.float("eval.finetune_lr"),
            finetune_epochs: self.int("eval.finetune_epochs"),
            episodes: self.int("eval.episodes"),
            way,
            shot: self.int("eval.shot"),
            learner: self.learner(),
            cosine_scale: self.float("eval.cosine_scale"),
            seed: self.seed(),
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if p.episodes < 2 {
            return Err(CliError::Config("eval.episodes must be at least 2".into()));
        }
        Ok(p)
    }

    pub fn gradcheck_seeds(&self) -> u64 {
        self.int("gradcheck.seeds") as u64
    }

    pub fn gradcheck_only(&self) -> Vec<String> {
        self.text("gradcheck.only")
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().to_string())
                    .filter(|x| !x.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn gradcheck_fault(&self) -> Option<String> {
        self.text("gradcheck.inject_fault").map(str::to_string)
    }

    /// Cross-section checks that single builders cannot see.
    pub fn validate(&self) -> Result<(), CliError> {
        self.generate_spec()?;
        self.stream_config()?;
        self.pretrain_config()?;
        self.head_config()?;
        self.mining_config()?;
        self.meta_config()?;
        for w in self.ways() {
            self.test_protocol(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_digest_is_stable() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.digest(), RunConfig::default().digest());
        assert_eq!(c.digest().len(), 16);
    }

    #[test]
    fn sections_and_canonical_values() {
        let a = RunConfig::parse("seed=0\n[meta]\nbeta = 3e-4\n\n# comment").unwrap();
        let b = RunConfig::parse("meta.beta = 0.0003").unwrap();
        assert_eq!(a.get("meta.beta"), "0.0003");
        assert_eq!(a.digest(), b.digest());
        assert!(a.is_explicit("meta.beta") && !b.is_explicit("seed"));
        let c = RunConfig::parse("meta.beta = 0.001").unwrap();
        assert_ne!(c.digest(), b.digest());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "meta.gamma = 1",
            "meta.beta = fast",
            "eval.ways = 5,,10",
            "eval.learner = knn",
            "pretrain.joint_loss = maybe",
            "sampling.action = 4y4",
            "just words",
        ] {
            assert!(
                matches!(RunConfig::parse(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn builders_follow_settings() {
        let c = RunConfig::parse(
            "ablation = no-hard-episodes\neval.ways = 5, 10,20\nsampling.action = 8→4×4",
        )
        .unwrap();
        assert_eq!(c.meta_config().unwrap().source, EpisodeSource::Random);
        assert_eq!(c.ways(), vec![5, 10, 20]);
        assert_eq!(c.stream_config().unwrap().action_frames, 16);
        let c = RunConfig::parse("ablation = concat-no-a3m\nmeta.alpha = 0").unwrap();
        assert_eq!(c.head_config().unwrap().kind, HeadKind::Concat);
        assert!(c.validate().is_err());
    }
}
