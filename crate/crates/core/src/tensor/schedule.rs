//! Learning-rate schedules indexed by optimizer step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Linear warmup to the peak, then a half-period cosine to `final_lr`.
    WarmupCosine,
    /// Half-period cosine from the peak to `final_lr`, no warmup.
    CosineAnnealing,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn warmup_cosine(peak_lr: f64, final_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            warmup_steps,
            peak_lr,
            final_lr,
            total_steps,
        }
    }

    pub fn cosine(peak_lr: f64, final_lr: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::CosineAnnealing,
            warmup_steps: 0,
            peak_lr,
            final_lr,
            total_steps,
        }
    }

    pub fn constant(lr: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup_steps: 0,
            peak_lr: lr,
            final_lr: lr,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TensorError::Invalid { op: "lr_schedule", msg });
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.final_lr >= 0.0 && self.final_lr <= self.peak_lr) {
            return bad(format!("final_lr must lie in [0, peak], got {}", self.final_lr));
        }
        if self.kind == ScheduleKind::WarmupCosine && self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup of {} steps exceeds total {}",
                self.warmup_steps, self.total_steps
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step >= self.total_steps {
            return Err(TensorError::Invalid {
                op: "lr_at",
                msg: format!("step {step} outside schedule of {} steps", self.total_steps),
            });
        }
        let cosine = |pos: usize, span: usize| {
            let p = if span == 0 { 0.0 } else { pos as f64 / span as f64 };
            self.final_lr + (self.peak_lr - self.final_lr) * 0.5 * (1.0 + (PI * p).cos())
        };
        Ok(match self.kind {
            ScheduleKind::Constant => self.peak_lr,
            ScheduleKind::CosineAnnealing => cosine(step, self.total_steps - 1),
            ScheduleKind::WarmupCosine => {
                let w = self.warmup_steps;
                if step < w {
                    self.peak_lr * (step + 1) as f64 / w as f64
                } else {
                    cosine(step - w, self.total_steps.saturating_sub(w + 1))
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_reaches_peak() {
        let s = LrSchedule::warmup_cosine(0.064, 0.0, 5, 50);
        assert_eq!(s.lr_at(4).unwrap(), 0.064);
        assert!(s.lr_at(0).unwrap() > 0.0 && s.lr_at(0).unwrap() < 0.064);
        assert_eq!(s.lr_at(5).unwrap(), 0.064);
    }

    #[test]
    fn cosine_ends_at_final() {
        let s = LrSchedule::cosine(0.064, 0.001, 20);
        assert!((s.lr_at(19).unwrap() - 0.001).abs() < 1e-15);
        let w = LrSchedule::warmup_cosine(0.064, 0.001, 3, 20);
        assert!((w.lr_at(19).unwrap() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn cosine_midpoint() {
        let s = LrSchedule::cosine(0.064, 0.0, 101);
        assert!((s.lr_at(50).unwrap() - 0.032).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_step() {
        let s = LrSchedule::constant(0.1, 3);
        assert!(s.lr_at(3).is_err());
        assert_eq!(s.lr_at(2).unwrap(), 0.1);
    }

    #[test]
    fn cosine_is_non_increasing_and_positive() {
        let s = LrSchedule::warmup_cosine(0.01, 1e-4, 10, 300);
        let lrs: Vec<f64> = (0..300).map(|i| s.lr_at(i).unwrap()).collect();
        assert!(lrs.iter().all(|&v| v > 0.0));
        assert!(lrs[9..].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[..10].windows(2).all(|w| w[1] > w[0]));
    }
}
