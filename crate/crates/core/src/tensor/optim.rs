//! First-order optimizers over named parameter tensors.

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball SGD: `v = μ v + g`, `p -= lr v`.
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter slots plus a step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            first: zeros,
            second,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update `params` in place from `grads` at learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TensorError::Invalid {
                op: "optimizer_step",
                msg: format!("learning rate must be positive, got {lr}"),
            });
        }
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Invalid {
                op: "optimizer_step",
                msg: format!(
                    "expected {} parameters, got {} params and {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for ((p, g), slot) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != slot.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = momentum * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mh = *mv / bc1;
                        let vh = *vv / bc2;
                        *pv -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, init: f64, grads: &[f64], lr: f64) -> f64 {
        let mut p = Tensor::vector(vec![init]);
        let mut st = OptimizerState::new(kind, &[&p]);
        for &g in grads {
            let gt = Tensor::vector(vec![g]);
            st.step(&mut [&mut p], &[&gt], lr).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn plain_sgd_step() {
        assert!((run(OptimizerKind::sgd(0.0), 0.0, &[1.0], 0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        // -0.1*1 - 0.1*(0.9*1 + 1) = -0.29
        assert!((run(OptimizerKind::sgd(0.9), 0.0, &[1.0, 1.0], 0.1) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        assert_eq!(run(OptimizerKind::sgd(0.9), 0.7, &[0.0, 0.0], 0.1), 0.7);
        assert_eq!(run(OptimizerKind::adam(), 0.7, &[0.0, 0.0], 0.1), 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = run(OptimizerKind::adam(), 0.0, &[3.0], 0.01);
        assert!((p + 0.01).abs() < 1e-9);
    }

    #[test]
    fn step_counter_and_errors() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut st = OptimizerState::new(OptimizerKind::adam(), &[&p]);
        let bad = Tensor::vector(vec![1.0]);
        assert!(matches!(
            st.step(&mut [&mut p], &[&bad], 0.1),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let g = Tensor::vector(vec![1.0, 1.0]);
        assert!(st.step(&mut [&mut p], &[&g], 0.0).is_err());
        assert_eq!(st.steps_taken(), 0);
        st.step(&mut [&mut p], &[&g], 0.1).unwrap();
        st.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(st.steps_taken(), 2);
    }
}
