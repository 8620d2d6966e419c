//! Clip-wise consistent augmentation.
//!
//! [`AugmentationConfig::draw`] samples one [`AugParams`]; [`apply`] runs those
//! parameters over every frame of a view. Order: crop and area resize,
//! horizontal flip, colour jitter, grayscale, blur, clamp.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::sampling::Resolution;
use super::{Frames, SynthError};
use crate::rng::Rng;

const CROP_ATTEMPTS: usize = 10;
const BLUR_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Fraction of the frame area kept by the random crop.
    pub crop_scale: (f64, f64),
    /// Aspect ratio (width / height) range of the crop.
    pub crop_ratio: (f64, f64),
    pub hflip_prob: f64,
    pub jitter_prob: f64,
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_scale: (0.5, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter_prob: 0.8,
            jitter_strength: 0.4,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
        }
    }
}

/// Parameters of one augmentation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct AugParams {
    /// Crop rectangle `(y0, x0, height, width)` in source pixels.
    pub crop: (f64, f64, f64, f64),
    pub out: Resolution,
    pub flip: bool,
    /// Per-channel `(gain, bias)`, when jitter is active.
    pub jitter: Option<Vec<(f64, f64)>>,
    pub grayscale: bool,
    pub blur: bool,
}

impl AugParams {
    /// Resize only.
    pub fn identity(src_h: usize, src_w: usize, out: Resolution) -> Self {
        Self {
            crop: (0.0, 0.0, src_h as f64, src_w as f64),
            out,
            flip: false,
            jitter: None,
            grayscale: false,
            blur: false,
        }
    }
}

impl AugmentationConfig {
    /// Resize with no randomness.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            hflip_prob: 0.0,
            jitter_prob: 0.0,
            jitter_strength: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let probs = [
            ("hflip_prob", self.hflip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(SynthError::Config(format!("bad crop_scale ({lo}, {hi})")));
        }
        let (lo, hi) = self.crop_ratio;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SynthError::Config(format!("bad crop_ratio ({lo}, {hi})")));
        }
        if !(self.jitter_strength >= 0.0 && self.jitter_strength <= 1.0) {
            return Err(SynthError::Config(format!(
                "jitter_strength {} is outside [0, 1]",
                self.jitter_strength
            )));
        }
        Ok(())
    }

    fn draw_crop(&self, h: usize, w: usize, rng: &mut Rng) -> (f64, f64, f64, f64) {
        let (hf, wf) = (h as f64, w as f64);
        let area = hf * wf;
        for _ in 0..CROP_ATTEMPTS {
            let scale = uniform(rng, self.crop_scale);
            let log_ratio = uniform(rng, (self.crop_ratio.0.ln(), self.crop_ratio.1.ln()));
            let ratio = log_ratio.exp();
            let cw = (area * scale * ratio).sqrt();
            let ch = (area * scale / ratio).sqrt();
            if cw <= wf + 1e-9 && ch <= hf + 1e-9 && cw >= 1.0 && ch >= 1.0 {
                let (cw, ch) = (cw.min(wf), ch.min(hf));
                let y0 = rng.gen::<f64>() * (hf - ch);
                let x0 = rng.gen::<f64>() * (wf - cw);
                return (y0, x0, ch, cw);
            }
        }
        // Center crop at the largest admissible size for the mid-range scale.
        let scale = 0.5 * (self.crop_scale.0 + self.crop_scale.1);
        let side = (area * scale).sqrt();
        let (ch, cw) = (side.min(hf), side.min(wf));
        ((hf - ch) / 2.0, (wf - cw) / 2.0, ch, cw)
    }

    /// Draw one parameter set for a view of `frames`.
    pub fn draw(&self, frames: &Frames, out: Resolution, rng: &mut Rng) -> AugParams {
        let crop = self.draw_crop(frames.h, frames.w, rng);
        let flip = rng.gen::<f64>() < self.hflip_prob;
        let jitter = if rng.gen::<f64>() < self.jitter_prob {
            let s = self.jitter_strength;
            Some(
                (0..frames.c)
                    .map(|_| (uniform(rng, (1.0 - s, 1.0 + s)), uniform(rng, (-s / 2.0, s / 2.0))))
                    .collect(),
            )
        } else {
            None
        };
        let grayscale = rng.gen::<f64>() < self.grayscale_prob;
        let blur = rng.gen::<f64>() < self.blur_prob;
        AugParams {
            crop,
            out,
            flip,
            jitter,
            grayscale,
            blur,
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Row-stochastic `out × src` matrix averaging `[start, start + len)` into
/// `out` equal bins.
fn area_weights(src: usize, start: f64, len: f64, out: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * src];
    let step = len / out as f64;
    for o in 0..out {
        let lo = start + o as f64 * step;
        let hi = lo + step;
        let first = lo.floor().max(0.0) as usize;
        let last = (hi.ceil() as usize).min(src);
        for p in first..last {
            let overlap = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
            m[o * src + p] = overlap / step;
        }
    }
    m
}

fn blur_plane(plane: &mut [f64], h: usize, w: usize) {
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = plane[y * w + x.saturating_sub(1)];
            let r = plane[y * w + (x + 1).min(w - 1)];
            tmp[y * w + x] = BLUR_TAPS[0] * l + BLUR_TAPS[1] * plane[y * w + x] + BLUR_TAPS[2] * r;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let u = tmp[y.saturating_sub(1) * w + x];
            let d = tmp[(y + 1).min(h - 1) * w + x];
            plane[y * w + x] = BLUR_TAPS[0] * u + BLUR_TAPS[1] * tmp[y * w + x] + BLUR_TAPS[2] * d;
        }
    }
}

fn luma_weights(c: usize) -> Vec<f64> {
    if c == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / c as f64; c]
    }
}

/// Apply `p` identically to every frame.
pub fn apply(frames: &Frames, p: &AugParams) -> Frames {
    let (c, h, w) = (frames.c, frames.h, frames.w);
    let (oh, ow) = (p.out.height, p.out.width);
    let (y0, x0, ch, cw) = p.crop;
    let wy = area_weights(h, y0, ch, oh);
    let wx = area_weights(w, x0, cw, ow);
    let luma = luma_weights(c);
    let mut out = Vec::with_capacity(frames.n * c * oh * ow);
    let mut rows = vec![0.0; oh * w];
    let mut frame_out = vec![0.0; c * oh * ow];
    for k in 0..frames.n {
        let src = frames.frame(k);
        for ci in 0..c {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            rows.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..oh {
                for y in 0..h {
                    let wt = wy[o * h + y];
                    if wt != 0.0 {
                        let (dst, s) = (&mut rows[o * w..(o + 1) * w], &plane[y * w..(y + 1) * w]);
                        dst.iter_mut().zip(s).for_each(|(d, v)| *d += wt * v);
                    }
                }
            }
            let dst = &mut frame_out[ci * oh * ow..(ci + 1) * oh * ow];
            for o in 0..oh {
                for q in 0..ow {
                    let col = if p.flip { ow - 1 - q } else { q };
                    let wrow = &wx[col * w..(col + 1) * w];
                    dst[o * ow + q] = wrow.iter().zip(&rows[o * w..(o + 1) * w]).map(|(a, b)| a * b).sum();
                }
            }
            if let Some(j) = &p.jitter {
                let (gain, bias) = j[ci];
                dst.iter_mut().for_each(|v| *v = *v * gain + bias);
            }
        }
        if p.grayscale {
            for i in 0..oh * ow {
                let g: f64 = (0..c).map(|ci| luma[ci] * frame_out[ci * oh * ow + i]).sum();
                (0..c).for_each(|ci| frame_out[ci * oh * ow + i] = g);
            }
        }
        if p.blur {
            for ci in 0..c {
                blur_plane(&mut frame_out[ci * oh * ow..(ci + 1) * oh * ow], oh, ow);
            }
        }
        out.extend(frame_out.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Frames {
        n: frames.n,
        c,
        h: oh,
        w: ow,
        data: out,
    }
}
