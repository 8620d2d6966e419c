//! Procedural two-factor videos.
//!
//! The appearance factor selects a binary background texture (orientation and
//! band width) and a per-channel colour tint. The motion factor selects the
//! trajectory of a square that is added on top of the background as a fixed
//! brightness increment, so frame differences do not depend on the background.
//! Neither factor contains horizontal mirror pairs. Per-video nuisance: texture
//! phase, brightness offset, trajectory jitter, speed and pixel noise.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SynthError, VideoTensor};
use crate::rng;

pub const TEXTURE_LO: f64 = 0.15;
pub const TEXTURE_HI: f64 = 0.55;
/// Brightness added where the moving square covers a pixel.
pub const OBJECT_DELTA: f64 = 0.3;
const TINT_SPREAD: f64 = 0.2;

/// Channel gain of the background for an appearance class: bit `c` of the
/// class index pushes channel `c` up or down.
pub fn appearance_tint(appearance: usize, channel: usize) -> f64 {
    let bit = (appearance % 8) >> (channel % 3) & 1;
    if bit == 1 {
        1.0 + TINT_SPREAD
    } else {
        1.0 - TINT_SPREAD
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub appearance_classes: usize,
    pub motion_classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            appearance_classes: 8,
            motion_classes: 8,
            videos_per_class: 24,
            frames: 32,
            channels: 3,
            height: 32,
            width: 32,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

impl GenerateSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.appearance_classes < 2 || self.motion_classes < 2 {
            return Err(SynthError::Config(format!(
                "need at least 2 appearance and 2 motion classes, got {} and {}",
                self.appearance_classes, self.motion_classes
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(SynthError::Config(format!(
                "frames of {}x{} are too small to render shapes (minimum 8x8)",
                self.height, self.width
            )));
        }
        if self.frames == 0 || self.channels == 0 || self.videos_per_class == 0 {
            return Err(SynthError::Config(
                "frames, channels and videos_per_class must be positive".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::Config(format!("invalid noise_std {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn joint_classes(&self) -> usize {
        self.appearance_classes * self.motion_classes
    }

    pub fn joint_class(&self, appearance: usize, motion: usize) -> usize {
        appearance * self.motion_classes + motion
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn texture_bit(kind: usize, x: i64, y: i64, half: i64) -> bool {
    // No class is the horizontal mirror of another, so flip augmentation never
    // merges two classes.
    let half = half.max(1);
    let h = if kind % 8 < 4 { half } else { 2 * half };
    let band = |v: i64| v.div_euclid(h).rem_euclid(2) == 1;
    match kind % 4 {
        0 => band(y),
        1 => band(x),
        2 => band(x + y),
        _ => (x.div_euclid(h) + y.div_euclid(h)).rem_euclid(2) == 1,
    }
}

/// Trajectory offset from the frame centre at normalized time `t ∈ [0, 1]`.
fn trajectory(motion: usize, t: f64, amp: f64, radius: f64, speed: f64, angle0: f64) -> (f64, f64) {
    let shrink = 1.0 / (1.0 + (motion / 8) as f64);
    let a = amp * speed * shrink;
    let r = radius * shrink;
    let u = 2.0 * t - 1.0;
    let d = std::f64::consts::FRAC_1_SQRT_2;
    match motion % 8 {
        0 => (a * u, 0.0),
        1 => {
            let th = angle0 + 2.0 * PI * t * speed;
            (r * th.cos(), r * th.sin())
        }
        2 => (0.0, a * u),
        3 => (0.0, -a * u),
        4 => (d * a * u, d * a * u),
        5 => (d * a * u, -d * a * u),
        6 => (a * (angle0 + 4.0 * PI * t * speed).sin(), 0.0),
        _ => (0.0, a * (angle0 + 4.0 * PI * t * speed).sin()),
    }
}

/// Fraction of pixel `[p, p+1)` covered by the interval `[c - s, c + s)`.
fn coverage(p: usize, c: f64, s: f64) -> f64 {
    let lo = (c - s).max(p as f64);
    let hi = (c + s).min(p as f64 + 1.0);
    (hi - lo).clamp(0.0, 1.0)
}

pub fn render_video(
    spec: &GenerateSpec,
    video_id: u64,
    appearance: usize,
    motion: usize,
) -> VideoTensor {
    let mut rng = rng::derive(spec.seed, &[0x5649_4445, video_id]);
    let (h, w, c, t_len) = (spec.height, spec.width, spec.channels, spec.frames);
    let scale = w.min(h) as f64 / 32.0;
    // Fine bands stay visible at half resolution and wash out at quarter
    // resolution; coarse bands survive both.
    let half_period = ((3 * h.min(w) / 32) as i64).max(1) * (1 + (appearance / 8) as i64);
    let phase_x = rng.gen_range(0..4 * half_period);
    let phase_y = rng.gen_range(0..4 * half_period);
    let brightness = rng.gen_range(-0.03..0.03);
    let speed = rng.gen_range(0.9..1.1);
    let angle0 = rng.gen_range(0.0..2.0 * PI);
    let jitter = (rng.gen_range(-2.0..2.0) * scale, rng.gen_range(-2.0..2.0) * scale);
    let half = 4.0 * scale;
    let amp = 8.0 * scale;
    let radius = 7.0 * scale;
    let noise = Normal::new(0.0, spec.noise_std.max(1e-12)).expect("valid std");

    let mut background = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let bit = texture_bit(appearance, x as i64 + phase_x, y as i64 + phase_y, half_period);
            background[y * w + x] = if bit { TEXTURE_HI } else { TEXTURE_LO };
        }
    }

    let mut frames = vec![0f32; t_len * c * h * w];
    for t in 0..t_len {
        let tn = if t_len > 1 { t as f64 / (t_len - 1) as f64 } else { 0.0 };
        let (dx, dy) = trajectory(motion, tn, amp, radius, speed, angle0);
        let cx = w as f64 / 2.0 + dx + jitter.0;
        let cy = h as f64 / 2.0 + dy + jitter.1;
        let cov_x: Vec<f64> = (0..w).map(|x| coverage(x, cx, half)).collect();
        let cov_y: Vec<f64> = (0..h).map(|y| coverage(y, cy, half)).collect();
        for ch in 0..c {
            let tint = appearance_tint(appearance, ch);
            let base = (t * c + ch) * h * w;
            for y in 0..h {
                for x in 0..w {
                    let cov = cov_x[x] * cov_y[y];
                    let bg = background[y * w + x] * tint + brightness;
                    let mut v = bg + OBJECT_DELTA * cov;
                    if spec.noise_std > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    frames[base + y * w + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    VideoTensor {
        frames,
        t: t_len,
        c,
        h,
        w,
        video_id,
        appearance_class: appearance,
        motion_class: motion,
        joint_class: spec.joint_class(appearance, motion),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_frames_and_single_class() {
        let mut s = GenerateSpec {
            height: 7,
            ..GenerateSpec::default()
        };
        assert!(s.validate().is_err());
        s.height = 32;
        s.motion_classes = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn values_in_unit_interval() {
        let v = render_video(&GenerateSpec::default(), 3, 5, 1);
        assert!(v.frames.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_eq!(v.frames.len(), 32 * 3 * 32 * 32);
    }

    #[test]
    fn textures_share_mean_over_full_periods() {
        for kind in 0..8 {
            let mut on = 0;
            for y in 0..24 {
                for x in 0..24 {
                    on += texture_bit(kind, x, y, 3) as usize;
                }
            }
            assert_eq!(on, 288, "texture {kind}");
        }
    }

    #[test]
    fn reversed_trajectories_cover_the_same_positions() {
        let fwd: Vec<_> = (0..=10)
            .map(|i| trajectory(2, i as f64 / 10.0, 8.0, 7.0, 1.0, 0.0))
            .collect();
        let back: Vec<_> = (0..=10)
            .map(|i| trajectory(3, 1.0 - i as f64 / 10.0, 8.0, 7.0, 1.0, 0.0))
            .collect();
        for (a, b) in fwd.iter().zip(&back) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }
}
