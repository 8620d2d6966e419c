//! Action-appearance cross-attention head and its classifier.
//!
//! The action embedding queries the per-frame appearance embeddings; the
//! attention-weighted sum of value vectors is l2-normalized and fed to a
//! linear classifier. The ablation heads skip attention and classify a fixed
//! l2-normalized feature (one stream, or both concatenated).

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::checkpoint::{self, CheckpointError};
use crate::rng::Rng;
use crate::streams::StreamEmbeddings;
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    A3m,
    Concat,
    ActionOnly,
    AppearanceOnly,
}

impl HeadKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "a3m" => HeadKind::A3m,
            "concat" | "concat-no-a3m" => HeadKind::Concat,
            "action-only" => HeadKind::ActionOnly,
            "appearance-only" => HeadKind::AppearanceOnly,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::A3m => "a3m",
            HeadKind::Concat => "concat",
            HeadKind::ActionOnly => "action-only",
            HeadKind::AppearanceOnly => "appearance-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub embed_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub way: usize,
    pub classifier_bias: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::A3m,
            embed_dim: 64,
            d_k: 16,
            d_v: 64,
            way: 5,
            classifier_bias: true,
        }
    }
}

impl HeadConfig {
    /// Width of the vector the classifier sees.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            HeadKind::A3m => self.d_v,
            HeadKind::Concat => 2 * self.embed_dim,
            HeadKind::ActionOnly | HeadKind::AppearanceOnly => self.embed_dim,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.embed_dim == 0 || self.d_k == 0 || self.d_v == 0 || self.way == 0 {
            return Err("head widths and way must be positive".into());
        }
        Ok(())
    }
}

/// Meta-learned parameters, in order: `[key, value, query]` (A3M only), then
/// classifier weight `[feature, way]` and optional bias `[way]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub config: HeadConfig,
    pub theta: Vec<Tensor>,
}

/// Indices into `theta` / bound vars.
struct Layout {
    attention: Option<(usize, usize, usize)>,
    weight: usize,
    bias: Option<usize>,
}

impl HeadConfig {
    fn layout(&self) -> Layout {
        let base = if self.kind == HeadKind::A3m { 3 } else { 0 };
        Layout {
            attention: (self.kind == HeadKind::A3m).then_some((0, 1, 2)),
            weight: base,
            bias: self.classifier_bias.then_some(base + 1),
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.kind == HeadKind::A3m {
            v.extend(["key", "value", "query"]);
        }
        v.push("classifier.w");
        if self.classifier_bias {
            v.push("classifier.b");
        }
        v
    }
}

/// Inputs of a batch of items for one head kind.
#[derive(Clone, Debug)]
pub enum HeadInput {
    /// `[B, F, D]` frame embeddings and `[B, D]` action embeddings.
    Attention { frames: Tensor, action: Tensor },
    /// `[B, feature]` l2-normalized fixed features.
    Feature(Tensor),
}

impl HeadInput {
    pub fn rows(&self) -> usize {
        match self {
            HeadInput::Attention { action, .. } => action.shape()[0],
            HeadInput::Feature(t) => t.shape()[0],
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-9;
    v.iter().map(|x| x / n).collect()
}

/// Scaled dot-product attention of one query per item over its frames.
/// Returns `(a [B, F], h [B, d_v])`.
pub fn attend(g: &mut Graph, frames: Var, action: Var, key: Var, value: Var, query: Var) -> Result<(Var, Var)> {
    let fs = g.shape(frames).to_vec();
    if fs.len() != 3 || fs[1] == 0 {
        return Err(TensorError::Invalid {
            op: "attend",
            msg: format!("frames must be [B, F, D] with F >= 1, got {fs:?}"),
        });
    }
    let (b, f, d) = (fs[0], fs[1], fs[2]);
    let acts = g.shape(action).to_vec();
    if acts != [b, d] {
        return Err(TensorError::ShapeMismatch {
            op: "attend",
            lhs: fs,
            rhs: acts,
        });
    }
    let dk = g.shape(key)[1];
    let dv = g.shape(value)[1];
    let flat = g.reshape(frames, &[b * f, d])?;
    let k = g.matmul(flat, key)?;
    let k = g.reshape(k, &[b, f, dk])?;
    let v = g.matmul(flat, value)?;
    let v = g.reshape(v, &[b, f, dv])?;
    let q = g.matmul(action, query)?;
    let q = g.reshape(q, &[b, 1, dk])?;
    let kq = g.mul(k, q)?;
    let scores = g.sum_to(kq, &[b, f, 1])?;
    let scores = g.reshape(scores, &[b, f])?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let a = g.softmax(scores)?;
    let a3 = g.reshape(a, &[b, f, 1])?;
    let av = g.mul(a3, v)?;
    let h = g.sum_to(av, &[b, 1, dv])?;
    let h = g.reshape(h, &[b, dv])?;
    Ok((a, h))
}

/// `l2_normalize(h) · W (+ bias)`.
pub fn classify(g: &mut Graph, h: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let hn = g.l2_normalize(h)?;
    let logits = g.matmul(hn, weight)?;
    match bias {
        Some(b) => g.add(logits, b),
        None => Ok(logits),
    }
}

impl Head {
    pub fn new(config: HeadConfig, rng: &mut Rng) -> Self {
        let mut theta = Vec::new();
        if config.kind == HeadKind::A3m {
            let std = 1.0 / (config.embed_dim as f64).sqrt();
            theta.push(Tensor::randn(&[config.embed_dim, config.d_k], std, rng));
            theta.push(Tensor::randn(&[config.embed_dim, config.d_v], std, rng));
            theta.push(Tensor::randn(&[config.embed_dim, config.d_k], std, rng));
        }
        theta.push(Tensor::zeros(&[config.feature_dim(), config.way]));
        if config.classifier_bias {
            theta.push(Tensor::zeros(&[config.way]));
        }
        Self { config, theta }
    }

    /// Copy with a classifier of width `way`; the weights are kept when the
    /// width matches and replaced by zeros otherwise.
    pub fn with_way(&self, way: usize) -> Self {
        if way == self.config.way {
            return self.clone();
        }
        let mut out = self.clone();
        out.config.way = way;
        let l = out.config.layout();
        out.theta[l.weight] = Tensor::zeros(&[out.config.feature_dim(), way]);
        if let Some(b) = l.bias {
            out.theta[b] = Tensor::zeros(&[way]);
        }
        out
    }

    pub fn classifier_index(&self) -> (usize, Option<usize>) {
        let l = self.config.layout();
        (l.weight, l.bias)
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.theta.iter().map(|t| g.param(t.clone())).collect()
    }

    pub fn input(&self, items: &[&StreamEmbeddings]) -> HeadInput {
        let b = items.len();
        let d = self.config.embed_dim;
        match self.config.kind {
            HeadKind::A3m => {
                let f = items.first().map_or(0, |e| e.h_ap_frames.shape()[0]);
                let frames = items.iter().flat_map(|e| e.h_ap_frames.data().iter().copied()).collect();
                let action = items.iter().flat_map(|e| e.h_act.iter().copied()).collect();
                HeadInput::Attention {
                    frames: Tensor::new(vec![b, f, d], frames).expect("uniform embeddings"),
                    action: Tensor::new(vec![b, d], action).expect("uniform embeddings"),
                }
            }
            kind => {
                let rows: Vec<f64> = items
                    .iter()
                    .flat_map(|e| match kind {
                        HeadKind::ActionOnly => normalized(&e.h_act),
                        HeadKind::AppearanceOnly => normalized(&e.h_ap_mean),
                        _ => {
                            let mut cat = normalized(&e.h_ap_mean);
                            cat.extend(normalized(&e.h_act));
                            cat
                        }
                    })
                    .collect();
                let width = rows.len() / b.max(1);
                HeadInput::Feature(Tensor::new(vec![b, width], rows).expect("uniform embeddings"))
            }
        }
    }

    /// Unnormalized representation fed to the classifier, `[B, feature]`.
    pub fn representation(&self, g: &mut Graph, vars: &[Var], input: &HeadInput) -> Result<Var> {
        let l = self.config.layout();
        match (input, l.attention) {
            (HeadInput::Attention { frames, action }, Some((k, v, q))) => {
                let fr = g.constant(frames.clone());
                let ac = g.constant(action.clone());
                Ok(attend(g, fr, ac, vars[k], vars[v], vars[q])?.1)
            }
            (HeadInput::Feature(t), None) => Ok(g.constant(t.clone())),
            _ => Err(TensorError::Invalid {
                op: "head",
                msg: format!("input does not match head kind {}", self.config.kind.name()),
            }),
        }
    }

    pub fn logits(&self, g: &mut Graph, vars: &[Var], input: &HeadInput) -> Result<Var> {
        let l = self.config.layout();
        let h = self.representation(g, vars, input)?;
        classify(g, h, vars[l.weight], l.bias.map(|b| vars[b]))
    }

    pub fn loss(&self, g: &mut Graph, vars: &[Var], input: &HeadInput, targets: &[usize]) -> Result<Var> {
        let logits = self.logits(g, vars, input)?;
        g.cross_entropy(logits, targets)
    }

    /// Evaluate logits without keeping a graph.
    pub fn predict(&self, input: &HeadInput) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.theta.iter().map(|t| g.constant(t.clone())).collect();
        let logits = self.logits(&mut g, &vars, input)?;
        Ok(argmax_rows(g.value(logits)))
    }

    /// l2-normalized representations as plain rows.
    pub fn embed(&self, input: &HeadInput) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.theta.iter().map(|t| g.constant(t.clone())).collect();
        let h = self.representation(&mut g, &vars, input)?;
        let hn = g.l2_normalize(h)?;
        let t = g.value(hn);
        Ok((0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect())
    }
}

impl Head {
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> std::result::Result<(), CheckpointError> {
        let meta = serde_json::json!({ "head": self.config, "extra": extra });
        let names = self.config.param_names();
        let params: Vec<(String, &Tensor)> = names.iter().map(|n| n.to_string()).zip(self.theta.iter()).collect();
        checkpoint::save(dir, meta, &params)
    }

    pub fn load(dir: &Path) -> std::result::Result<(Self, serde_json::Value), CheckpointError> {
        let mut loaded = checkpoint::load(dir)?;
        let bad = |msg: String| CheckpointError::Index {
            path: dir.display().to_string(),
            msg,
        };
        let config: HeadConfig =
            serde_json::from_value(loaded.meta["head"].clone()).map_err(|e| bad(e.to_string()))?;
        config.validate().map_err(bad)?;
        let shapes = Head::new(config.clone(), &mut crate::rng::derive(0, &[])).theta;
        let theta = config
            .param_names()
            .iter()
            .zip(&shapes)
            .map(|(n, t)| loaded.take(n, t.shape()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let extra = loaded.meta["extra"].take();
        Ok((Self { config, theta }, extra))
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let cols = t.shape()[1];
    t.data()
        .chunks(cols)
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn attention_of(frames: Tensor, action: Tensor, k: Tensor, v: Tensor, q: Tensor) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = [frames, action, k, v, q].into_iter().map(|t| g.constant(t)).collect();
        let (a, h) = attend(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4]).unwrap();
        (g.value(a).clone(), g.value(h).clone())
    }

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        (0..n).for_each(|i| t.data_mut()[i * n + i] = 1.0);
        t
    }

    #[test]
    fn one_third_two_thirds() {
        // k_1 = 0, k_2 = (2 ln 2) e_1, q = e_1, d_k = 4: scaled scores (0, ln 2).
        let l = 2.0 * std::f64::consts::LN_2;
        let frames = Tensor::new(vec![1, 2, 4], vec![0.0, 0.0, 0.0, 0.0, l, 0.0, 0.0, 0.0]).unwrap();
        let action = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (a, h) = attention_of(frames, action, eye(4), eye(4), eye(4));
        assert!((a.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.data()[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((h.data()[0] - 2.0 / 3.0 * l).abs() < 1e-12);
    }

    #[test]
    fn single_frame_and_identical_keys() {
        let mut r = rng::derive(1, &[]);
        let v = Tensor::randn(&[3, 2], 1.0, &mut r);
        let one = Tensor::randn(&[1, 1, 3], 1.0, &mut r);
        let act = Tensor::randn(&[1, 3], 1.0, &mut r);
        let k = Tensor::randn(&[3, 2], 1.0, &mut r);
        let (a, h) = attention_of(one.clone(), act.clone(), k.clone(), v.clone(), k.clone());
        assert_eq!(a.data(), &[1.0]);
        let direct: Vec<f64> = (0..2).map(|j| (0..3).map(|i| one.data()[i] * v.data()[i * 2 + j]).sum()).collect();
        assert!(h.data().iter().zip(&direct).all(|(x, y)| (x - y).abs() < 1e-12));
        let same = Tensor::new(vec![1, 4, 3], one.data().repeat(4)).unwrap();
        let (a, _) = attention_of(same, act, k.clone(), v, k);
        assert!(a.data().iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn classify_examples() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::from_rows(&[vec![0.6, 0.8, 0.0]]).unwrap());
        let mut w = Tensor::zeros(&[3, 2]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let w = g.constant(w);
        let logits = classify(&mut g, h, w, None).unwrap();
        let got = g.value(logits).data().to_vec();
        assert!((got[0] - 0.6).abs() < 1e-8 && (got[1] - 0.8).abs() < 1e-8);
        let zero = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(Tensor::vector(vec![0.5, -1.0]));
        let logits = classify(&mut g, h, zero, Some(b)).unwrap();
        assert_eq!(g.value(logits).data(), &[0.5, -1.0]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut g = Graph::new();
        let fr = g.constant(Tensor::zeros(&[2, 3, 4]));
        let ac = g.constant(Tensor::zeros(&[2, 5]));
        let k = g.constant(Tensor::zeros(&[4, 2]));
        assert!(attend(&mut g, fr, ac, k, k, k).is_err());
        let h = g.constant(Tensor::zeros(&[1, 3]));
        assert!(classify(&mut g, h, k, None).is_err());
    }

    #[test]
    fn with_way_reshapes_classifier() {
        let mut head = Head::new(HeadConfig::default(), &mut rng::derive(1, &[]));
        head.theta[3].data_mut()[0] = 2.0;
        assert_eq!(head.with_way(5), head);
        let wide = head.with_way(10);
        assert_eq!(wide.theta[3].shape(), &[64, 10]);
        assert!(wide.theta[3].data().iter().all(|&v| v == 0.0));
        assert_eq!(wide.theta[0], head.theta[0]);
    }

    proptest! {
        #[test]
        fn attention_invariants(seed in any::<u64>(), f in 1usize..6, c in 0.1f64..5.0) {
            let mut r = rng::derive(seed, &[]);
            let d = 4;
            let frames = Tensor::randn(&[1, f, d], 1.0, &mut r);
            let act = Tensor::randn(&[1, d], 1.0, &mut r);
            let (k, v, q) = (Tensor::randn(&[d, 3], 1.0, &mut r), Tensor::randn(&[d, 5], 1.0, &mut r), Tensor::randn(&[d, 3], 1.0, &mut r));
            let (a, h) = attention_of(frames.clone(), act.clone(), k.clone(), v.clone(), q.clone());
            prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.data().iter().all(|&x| x >= 0.0));
            // h lies in the convex hull of the values: check per coordinate bounds.
            let vals: Vec<Vec<f64>> = (0..f).map(|m| (0..5).map(|j| (0..d).map(|i| frames.data()[m * d + i] * v.data()[i * 5 + j]).sum()).collect()).collect();
            for j in 0..5 {
                let lo = vals.iter().map(|r| r[j]).fold(f64::MAX, f64::min);
                let hi = vals.iter().map(|r| r[j]).fold(f64::MIN, f64::max);
                prop_assert!(h.data()[j] >= lo - 1e-9 && h.data()[j] <= hi + 1e-9);
            }
            // Reverse the frames: a reverses, h unchanged.
            let rev: Vec<f64> = (0..f).rev().flat_map(|m| frames.data()[m * d..(m + 1) * d].to_vec()).collect();
            let (a2, h2) = attention_of(Tensor::new(vec![1, f, d], rev).unwrap(), act.clone(), k.clone(), v.clone(), q.clone());
            for m in 0..f {
                prop_assert!((a.data()[m] - a2.data()[f - 1 - m]).abs() < 1e-12);
            }
            prop_assert!(h.max_abs_diff(&h2).unwrap() < 1e-9);
            // Classifier is invariant to positive scaling of h.
            let mut g = Graph::new();
            let w = g.constant(Tensor::randn(&[5, 3], 1.0, &mut r));
            let b = g.constant(Tensor::randn(&[3], 1.0, &mut r));
            let h1 = g.constant(h.clone());
            let hs = g.constant(h.map(|x| x * c));
            let l1 = classify(&mut g, h1, w, Some(b)).unwrap();
            let l2 = classify(&mut g, hs, w, Some(b)).unwrap();
            prop_assert!(g.value(l1).max_abs_diff(g.value(l2)).unwrap() < 1e-7);
        }

        #[test]
        fn scores_shift_invariant(seed in any::<u64>(), shift in -3.0f64..3.0) {
            // Adding a constant to every k_m·q: append a frame-independent
            // component to the keys that aligns with the query.
            let mut r = rng::derive(seed, &[]);
            let frames = Tensor::randn(&[1, 3, 2], 1.0, &mut r);
            let ext: Vec<f64> = frames.data().chunks(2).flat_map(|c| [c[0], c[1], 1.0]).collect();
            let frames3 = Tensor::new(vec![1, 3, 3], ext).unwrap();
            let act = Tensor::new(vec![1, 3], vec![0.3, -0.2, 1.0]).unwrap();
            let mut k = Tensor::zeros(&[3, 3]);
            k.data_mut()[0] = 1.0;
            k.data_mut()[4] = 1.0;
            let mut k2 = k.clone();
            k2.data_mut()[8] = shift;
            let v = Tensor::randn(&[3, 2], 1.0, &mut r);
            let q = eye(3);
            let (a1, _) = attention_of(frames3.clone(), act.clone(), k, v.clone(), q.clone());
            let (a2, _) = attention_of(frames3, act, k2, v, q);
            prop_assert!(a1.max_abs_diff(&a2).unwrap() < 1e-12);
        }
    }
}
