//! Synthetic two-factor videos, temporal sampling, augmentation and the
//! on-disk dataset format.

pub mod augment;
pub mod dataset;
pub mod io;
pub mod render;
pub mod sampling;

use thiserror::Error;

pub use augment::{AugParams, AugmentationConfig};
pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetManifest, ManifestEntry, Split};
pub use io::{DType, TensorFileError};
pub use render::GenerateSpec;
pub use sampling::{Resolution, SamplingScheme};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("video has {frames} frames but the scheme needs {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("view must contain at least one frame")]
    EmptyView,
    #[error(transparent)]
    File(#[from] TensorFileError),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One video, stored `T×C×H×W` row-major in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub frames: Vec<f32>,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub video_id: u64,
    pub appearance_class: usize,
    pub motion_class: usize,
    pub joint_class: usize,
}

impl VideoTensor {
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, self.c, self.h, self.w]
    }

    /// Sample frame indices with `scheme`, then augment and resize them as one
    /// view. Returns `frames × C × H' × W'` values.
    pub fn view(
        &self,
        scheme: &SamplingScheme,
        aug: &AugmentationConfig,
        rng: &mut crate::rng::Rng,
    ) -> Result<Frames, SynthError> {
        let idx = scheme.sample_indices(self.t, rng)?;
        let picked = self.pick(&idx);
        let params = aug.draw(&picked, scheme.resolution(), rng);
        Ok(augment::apply(&picked, &params))
    }

    pub fn pick(&self, idx: &[usize]) -> Frames {
        let mut data = Vec::with_capacity(idx.len() * self.frame_len());
        for &i in idx {
            data.extend(self.frame(i).iter().map(|&v| v as f64));
        }
        Frames {
            n: idx.len(),
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// A stack of frames `n×c×h×w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Frames {
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[k * n..(k + 1) * n]
    }
}
