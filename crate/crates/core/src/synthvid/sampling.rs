//! Temporal sampling schemes for the two streams.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn square(side: usize) -> Self {
        Self {
            height: side,
            width: side,
        }
    }
}

/// Default appearance-view resolution.
pub const APPEARANCE_RES: Resolution = Resolution::square(16);
/// Default action-view resolution.
pub const ACTION_RES: Resolution = Resolution::square(8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// `F×1`: one frame from each of `frames` equal segments.
    FramesPerSegment { frames: usize, resolution: Resolution },
    /// `S×L` (when `window == clip_len`) or `A→B` variants: in each of
    /// `segments` segments a contiguous `window`-frame span is drawn and
    /// subsampled with stride `window / clip_len`.
    Clips {
        segments: usize,
        clip_len: usize,
        window: usize,
        resolution: Resolution,
    },
}

/// `(start, len)` of `count` contiguous segments of a `t`-frame video; the last
/// segment absorbs the remainder.
pub fn segments(t: usize, count: usize) -> Vec<(usize, usize)> {
    let base = t / count;
    (0..count)
        .map(|k| {
            let start = k * base;
            let len = if k + 1 == count { t - start } else { base };
            (start, len)
        })
        .collect()
}

impl SamplingScheme {
    pub fn frames_per_segment(frames: usize) -> Self {
        SamplingScheme::FramesPerSegment {
            frames,
            resolution: APPEARANCE_RES,
        }
    }

    pub fn clips(segments: usize, clip_len: usize) -> Self {
        SamplingScheme::Clips {
            segments,
            clip_len,
            window: clip_len,
            resolution: ACTION_RES,
        }
    }

    /// Resolve names such as `8x1`, `4×4`, `32->16` or `8→4×4`.
    pub fn parse(name: &str) -> Result<Self, SynthError> {
        let norm = name.trim().replace('×', "x").replace('→', "->");
        let bad = || SynthError::Config(format!("unknown sampling scheme `{name}`"));
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        let scheme = if let Some((window, rest)) = norm.split_once("->") {
            let window = num(window)?;
            match rest.split_once('x') {
                Some((len, segs)) => SamplingScheme::Clips {
                    segments: num(segs)?,
                    clip_len: num(len)?,
                    window,
                    resolution: ACTION_RES,
                },
                None => SamplingScheme::Clips {
                    segments: 1,
                    clip_len: num(rest)?,
                    window,
                    resolution: ACTION_RES,
                },
            }
        } else {
            let (a, b) = norm.split_once('x').ok_or_else(bad)?;
            let (a, b) = (num(a)?, num(b)?);
            if b == 1 {
                Self::frames_per_segment(a)
            } else {
                Self::clips(a, b)
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = match *self {
            SamplingScheme::FramesPerSegment { frames, resolution } => {
                frames > 0 && resolution.height > 0 && resolution.width > 0
            }
            SamplingScheme::Clips {
                segments,
                clip_len,
                window,
                resolution,
            } => {
                segments > 0
                    && clip_len > 0
                    && window >= clip_len
                    && window % clip_len == 0
                    && resolution.height > 0
                    && resolution.width > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::Config(format!("invalid sampling scheme {self:?}")))
        }
    }

    pub fn with_resolution(self, res: Resolution) -> Self {
        match self {
            SamplingScheme::FramesPerSegment { frames, .. } => SamplingScheme::FramesPerSegment {
                frames,
                resolution: res,
            },
            SamplingScheme::Clips {
                segments,
                clip_len,
                window,
                ..
            } => SamplingScheme::Clips {
                segments,
                clip_len,
                window,
                resolution: res,
            },
        }
    }

    /// Frames in one sampled view (`F` or `S·L`).
    pub fn frame_count(&self) -> usize {
        match *self {
            SamplingScheme::FramesPerSegment { frames, .. } => frames,
            SamplingScheme::Clips {
                segments, clip_len, ..
            } => segments * clip_len,
        }
    }

    pub fn resolution(&self) -> Resolution {
        match *self {
            SamplingScheme::FramesPerSegment { resolution, .. }
            | SamplingScheme::Clips { resolution, .. } => resolution,
        }
    }

    /// Smallest video length the scheme accepts.
    pub fn min_frames(&self) -> usize {
        match *self {
            SamplingScheme::FramesPerSegment { frames, .. } => frames,
            SamplingScheme::Clips {
                segments, window, ..
            } => segments * window,
        }
    }

    /// Frame indices in temporal order for a `t`-frame video.
    pub fn sample_indices(&self, t: usize, rng: &mut Rng) -> Result<Vec<usize>, SynthError> {
        self.validate()?;
        match *self {
            SamplingScheme::FramesPerSegment { frames, .. } => {
                if t < frames {
                    return Err(SynthError::TooShort {
                        frames: t,
                        needed: frames,
                    });
                }
                Ok(segments(t, frames)
                    .into_iter()
                    .map(|(start, len)| start + rng.gen_range(0..len))
                    .collect())
            }
            SamplingScheme::Clips {
                segments: count,
                clip_len,
                window,
                ..
            } => {
                let stride = window / clip_len;
                let mut out = Vec::with_capacity(count * clip_len);
                for (start, len) in segments(t, count) {
                    if len < window {
                        return Err(SynthError::TooShort {
                            frames: len,
                            needed: window,
                        });
                    }
                    let first = start + rng.gen_range(0..=len - window);
                    out.extend((0..clip_len).map(|j| first + j * stride));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn eight_by_one_on_thirty_two() {
        let s = SamplingScheme::parse("8x1").unwrap();
        for seed in 0..50 {
            let idx = s.sample_indices(32, &mut rng::derive(seed, &[])).unwrap();
            assert_eq!(idx.len(), 8);
            for (k, &i) in idx.iter().enumerate() {
                assert!((4 * k..=4 * k + 3).contains(&i));
            }
        }
    }

    #[test]
    fn singleton_segments() {
        let s = SamplingScheme::frames_per_segment(6);
        let idx = s.sample_indices(6, &mut rng::derive(1, &[])).unwrap();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn remainder_goes_to_last_segment() {
        assert_eq!(segments(10, 4), vec![(0, 2), (2, 2), (4, 2), (6, 4)]);
        let s = SamplingScheme::frames_per_segment(4);
        let mut seen_late = false;
        for seed in 0..200 {
            let idx = s.sample_indices(10, &mut rng::derive(seed, &[])).unwrap();
            assert!(idx[0] <= 1 && (2..=3).contains(&idx[1]) && (4..=5).contains(&idx[2]));
            assert!((6..=9).contains(&idx[3]));
            seen_late |= idx[3] >= 8;
        }
        assert!(seen_late);
    }

    #[test]
    fn four_by_four() {
        let s = SamplingScheme::parse("4×4").unwrap();
        let idx = s.sample_indices(32, &mut rng::derive(3, &[])).unwrap();
        assert_eq!(idx.len(), 16);
        for k in 0..4 {
            let clip = &idx[4 * k..4 * k + 4];
            assert!(clip.iter().all(|&i| (8 * k..8 * k + 8).contains(&i)));
            assert!(clip.windows(2).all(|w| w[1] == w[0] + 1));
        }
        let all = s.sample_indices(16, &mut rng::derive(3, &[])).unwrap();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn downsampled_window() {
        let s = SamplingScheme::parse("32→16").unwrap();
        assert_eq!(s.frame_count(), 16);
        let idx = s.sample_indices(64, &mut rng::derive(9, &[])).unwrap();
        assert!(idx.windows(2).all(|w| w[1] == w[0] + 2));
        assert!(idx[15] - idx[0] == 30);
        let s = SamplingScheme::parse("8->4x4").unwrap();
        assert_eq!(s.frame_count(), 16);
        let idx = s.sample_indices(32, &mut rng::derive(9, &[])).unwrap();
        assert_eq!(idx, [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30]);
    }

    #[test]
    fn named_schemes_resolve() {
        for (name, count) in [("4x1", 4), ("8x1", 8), ("16x1", 16), ("4x4", 16), ("32->16", 16), ("8->4x4", 16)] {
            assert_eq!(SamplingScheme::parse(name).unwrap().frame_count(), count, "{name}");
        }
        assert!(SamplingScheme::parse("banana").is_err());
    }

    #[test]
    fn too_short_errors() {
        let mut r = rng::derive(0, &[]);
        assert!(SamplingScheme::frames_per_segment(8).sample_indices(7, &mut r).is_err());
        assert!(SamplingScheme::clips(4, 4).sample_indices(15, &mut r).is_err());
    }

    proptest! {
        #[test]
        fn indices_stay_in_segments_and_increase(
            t in 16usize..80,
            f in 1usize..16,
            segs in 1usize..5,
            len in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut r = rng::derive(seed, &[]);
            let fs = SamplingScheme::frames_per_segment(f);
            if t >= f {
                let idx = fs.sample_indices(t, &mut r).unwrap();
                let parts = segments(t, f);
                for (i, (s, l)) in idx.iter().zip(parts) {
                    prop_assert!(*i >= s && *i < s + l);
                }
                prop_assert!(idx.windows(2).all(|w| w[1] > w[0]));
            }
            let cs = SamplingScheme::clips(segs, len);
            if t / segs >= len {
                let idx = cs.sample_indices(t, &mut r).unwrap();
                let parts = segments(t, segs);
                for (k, (s, l)) in parts.into_iter().enumerate() {
                    for &i in &idx[k * len..(k + 1) * len] {
                        prop_assert!(i >= s && i < s + l);
                    }
                }
                prop_assert!(idx.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
