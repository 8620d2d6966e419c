//! Two-stream encoders and projection heads.
//!
//! Both encoders are perceptrons: the appearance encoder maps one flattened
//! frame to a `D`-vector and is averaged over the sampled frames, the action
//! encoder maps a whole flattened clip (frames in temporal order) to one
//! `D`-vector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError};
use crate::rng::Rng;
use crate::synthvid::Frames;
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

/// Fully connected layers with relu between them and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl Mlp {
    /// He-initialized weights and zero biases for layer widths `dims`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an mlp needs input and output widths");
        let weights = dims
            .windows(2)
            .map(|w| Tensor::randn(&[w[0], w[1]], (2.0 / w[0] as f64).sqrt(), rng))
            .collect();
        let biases = dims[1..].iter().map(|&d| Tensor::zeros(&[d])).collect();
        Self { weights, biases }
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().unwrap().shape()[1]
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_width()];
        d.extend(self.weights.iter().map(|w| w.shape()[1]));
        d
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundMlp {
            weights: self.weights.iter().map(|t| leaf(g, t)).collect(),
            biases: self.biases.iter().map(|t| leaf(g, t)).collect(),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("{prefix}.{i}.w"), w));
            out.push((format!("{prefix}.{i}.b"), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn load(loaded: &mut checkpoint::Loaded, prefix: &str, dims: &[usize]) -> std::result::Result<Self, CheckpointError> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            weights.push(loaded.take(&format!("{prefix}.{i}.w"), &[w[0], w[1]])?);
            biases.push(loaded.take(&format!("{prefix}.{i}.b"), &[w[1]])?);
        }
        Ok(Self { weights, biases })
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = self.weights.len();
        let mut h = x;
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let xw = g.matmul(h, w)?;
            h = g.add(xw, b)?;
            if i + 1 < n {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Parameter vars in the same order as [`Mlp::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Values per appearance frame (`C·H·W` at the appearance resolution).
    pub appearance_frame_len: usize,
    /// Frames per appearance view (`F`).
    pub appearance_frames: usize,
    /// Values per action frame at the action resolution.
    pub action_frame_len: usize,
    /// Frames per action view (`S·L`).
    pub action_frames: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    /// Adds the head over concatenated stream embeddings.
    pub joint_head: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            appearance_frame_len: 3 * 16 * 16,
            appearance_frames: 8,
            action_frame_len: 3 * 8 * 8,
            action_frames: 16,
            hidden: vec![256, 256],
            embed_dim: 64,
            proj_hidden: 128,
            proj_dim: 128,
            joint_head: false,
        }
    }
}

impl StreamConfig {
    fn encoder_dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(self.embed_dim);
        d
    }

    fn head_dims(&self, input: usize) -> Vec<usize> {
        vec![input, self.proj_hidden, self.proj_dim]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            self.appearance_frame_len,
            self.appearance_frames,
            self.action_frame_len,
            self.action_frames,
            self.embed_dim,
            self.proj_hidden,
            self.proj_dim,
        ];
        if all.contains(&0) || self.hidden.contains(&0) {
            return Err("stream widths and frame counts must be positive".into());
        }
        Ok(())
    }
}

/// Embeddings of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamEmbeddings {
    /// `F×D` per-frame appearance embeddings.
    pub h_ap_frames: Tensor,
    pub h_ap_mean: Vec<f64>,
    pub h_act: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoStream {
    pub config: StreamConfig,
    pub appearance: Mlp,
    pub action: Mlp,
    pub proj_ap: Mlp,
    pub proj_act: Mlp,
    pub proj_joint: Option<Mlp>,
}

/// All stream parameters bound to one graph.
pub struct BoundTwoStream {
    pub appearance: BoundMlp,
    pub action: BoundMlp,
    pub proj_ap: BoundMlp,
    pub proj_act: BoundMlp,
    pub proj_joint: Option<BoundMlp>,
}

impl BoundTwoStream {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.appearance.vars();
        v.extend(self.action.vars());
        v.extend(self.proj_ap.vars());
        v.extend(self.proj_act.vars());
        if let Some(j) = &self.proj_joint {
            v.extend(j.vars());
        }
        v
    }
}

fn width_check(g: &Graph, x: Var, want: usize, op: &'static str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 2 || s[1] != want {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![want],
        });
    }
    Ok(())
}

/// Per-frame embeddings `[B·F, D]` and their per-video mean `[B, D]` from
/// flattened frames `[B·F, C·H·W]`.
pub fn encode_appearance(g: &mut Graph, enc: &BoundMlp, frames: Var, f: usize) -> Result<(Var, Var)> {
    let width = g.shape(enc.weights[0])[0];
    width_check(g, frames, width, "encode_appearance")?;
    let rows = g.shape(frames)[0];
    if f == 0 || rows == 0 || !rows.is_multiple_of(f) {
        return Err(TensorError::Invalid {
            op: "encode_appearance",
            msg: format!("{rows} frame rows do not split into views of {f} frames"),
        });
    }
    let per_frame = enc.forward(g, frames)?;
    let d = g.shape(per_frame)[1];
    let grouped = g.reshape(per_frame, &[rows / f, f, d])?;
    let mean = g.mean_axis(grouped, 1)?;
    Ok((per_frame, mean))
}

/// Clip embeddings `[B, D]` from flattened clips `[B, F'·C·H·W]`.
pub fn encode_action(g: &mut Graph, enc: &BoundMlp, clips: Var) -> Result<Var> {
    let width = g.shape(enc.weights[0])[0];
    width_check(g, clips, width, "encode_action")?;
    enc.forward(g, clips)
}

pub fn project(g: &mut Graph, head: &BoundMlp, h: Var) -> Result<Var> {
    let width = g.shape(head.weights[0])[0];
    width_check(g, h, width, "project")?;
    head.forward(g, h)
}

/// Pixel values are mapped through `(x - INPUT_MEAN) / INPUT_SCALE`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_SCALE: f64 = 0.25;

fn standardize(x: f64) -> f64 {
    (x - INPUT_MEAN) / INPUT_SCALE
}

/// Standardized network input: one row per frame.
pub fn appearance_input(views: &[&Frames]) -> Tensor {
    let rows: usize = views.iter().map(|v| v.n).sum();
    let cols = views.first().map_or(0, |v| v.frame_len());
    let data = views.iter().flat_map(|v| v.data.iter().map(|&x| standardize(x))).collect();
    Tensor::new(vec![rows, cols], data).expect("uniform view shapes")
}

/// Standardized network input: one row per clip.
pub fn action_input(views: &[&Frames]) -> Tensor {
    let cols = views.first().map_or(0, |v| v.data.len());
    let data = views.iter().flat_map(|v| v.data.iter().map(|&x| standardize(x))).collect();
    Tensor::new(vec![views.len(), cols], data).expect("uniform view shapes")
}

impl TwoStream {
    pub fn new(config: StreamConfig, rng: &mut Rng) -> Self {
        let appearance = Mlp::new(&config.encoder_dims(config.appearance_frame_len), rng);
        let action = Mlp::new(
            &config.encoder_dims(config.action_frame_len * config.action_frames),
            rng,
        );
        let proj_ap = Mlp::new(&config.head_dims(config.embed_dim), rng);
        let proj_act = Mlp::new(&config.head_dims(config.embed_dim), rng);
        let proj_joint = config
            .joint_head
            .then(|| Mlp::new(&config.head_dims(2 * config.embed_dim), rng));
        Self {
            config,
            appearance,
            action,
            proj_ap,
            proj_act,
            proj_joint,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundTwoStream {
        BoundTwoStream {
            appearance: self.appearance.bind(g, trainable),
            action: self.action.bind(g, trainable),
            proj_ap: self.proj_ap.bind(g, trainable),
            proj_act: self.proj_act.bind(g, trainable),
            proj_joint: self.proj_joint.as_ref().map(|m| m.bind(g, trainable)),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.appearance.named_params("appearance");
        v.extend(self.action.named_params("action"));
        v.extend(self.proj_ap.named_params("proj_ap"));
        v.extend(self.proj_act.named_params("proj_act"));
        if let Some(j) = &self.proj_joint {
            v.extend(j.named_params("proj_joint"));
        }
        v
    }

    /// Mutable parameters in the order of [`BoundTwoStream::vars`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.appearance.params_mut();
        v.extend(self.action.params_mut());
        v.extend(self.proj_ap.params_mut());
        v.extend(self.proj_act.params_mut());
        if let Some(j) = &mut self.proj_joint {
            v.extend(j.params_mut());
        }
        v
    }

    /// Encoder outputs for paired appearance and action views, one entry per
    /// video. Projection heads are not used.
    pub fn embed(&self, app_views: &[&Frames], act_views: &[&Frames]) -> Result<Vec<StreamEmbeddings>> {
        if app_views.len() != act_views.len() {
            return Err(TensorError::Invalid {
                op: "embed",
                msg: format!("{} appearance views but {} action views", app_views.len(), act_views.len()),
            });
        }
        if app_views.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(v) = app_views.iter().find(|v| v.n != self.config.appearance_frames) {
            return Err(TensorError::Invalid {
                op: "embed",
                msg: format!("appearance view has {} frames, encoder expects {}", v.n, self.config.appearance_frames),
            });
        }
        let f = self.config.appearance_frames;
        let mut g = Graph::new();
        let app = self.appearance.bind(&mut g, false);
        let act = self.action.bind(&mut g, false);
        let xa = g.constant(appearance_input(app_views));
        let xc = g.constant(action_input(act_views));
        let (frames, mean) = encode_appearance(&mut g, &app, xa, f)?;
        let h_act = encode_action(&mut g, &act, xc)?;
        let d = self.config.embed_dim;
        let (fv, mv, av) = (g.value(frames), g.value(mean), g.value(h_act));
        Ok((0..app_views.len())
            .map(|i| StreamEmbeddings {
                h_ap_frames: Tensor::new(vec![f, d], fv.data()[i * f * d..(i + 1) * f * d].to_vec()).unwrap(),
                h_ap_mean: mv.row(i).to_vec(),
                h_act: av.row(i).to_vec(),
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> std::result::Result<(), CheckpointError> {
        let meta = serde_json::to_value(&self.config).expect("config serializes");
        checkpoint::save(dir, meta, &self.named_params())
    }

    pub fn load(dir: &Path) -> std::result::Result<Self, CheckpointError> {
        let mut l = checkpoint::load(dir)?;
        let config: StreamConfig = serde_json::from_value(l.meta.clone()).map_err(|e| CheckpointError::Index {
            path: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        let appearance = Mlp::load(&mut l, "appearance", &config.encoder_dims(config.appearance_frame_len))?;
        let action = Mlp::load(
            &mut l,
            "action",
            &config.encoder_dims(config.action_frame_len * config.action_frames),
        )?;
        let proj_ap = Mlp::load(&mut l, "proj_ap", &config.head_dims(config.embed_dim))?;
        let proj_act = Mlp::load(&mut l, "proj_act", &config.head_dims(config.embed_dim))?;
        let proj_joint = if config.joint_head {
            Some(Mlp::load(&mut l, "proj_joint", &config.head_dims(2 * config.embed_dim))?)
        } else {
            None
        };
        Ok(Self {
            config,
            appearance,
            action,
            proj_ap,
            proj_act,
            proj_joint,
        })
    }
}
