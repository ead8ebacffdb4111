//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::DenseMatrix;

/// Optimizer state: one pair of moment tensors per parameter, in the same
/// order the parameters are visited on every step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl AdamState {
    /// Moments are allocated to match `shapes`, one entry per parameter.
    pub fn new(lr: f64, weight_decay: f64, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. Decoupled decay first
    /// (p ← p − lr·wd·p), then the bias-corrected moment update.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[&DenseMatrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument {
                op: "adam_step",
                msg: format!(
                    "{} params, {} grads, state holds {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            let decay = 1.0 - self.lr * self.weight_decay;
            for (((pv, &gv), mv), vv) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.values_mut().iter_mut())
                .zip(v.values_mut().iter_mut())
            {
                *pv *= decay;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference implementation, kept deliberately separate from the
    /// vectorized path above.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: u32,
    }

    impl ScalarAdam {
        fn step(&mut self, p: &mut f64, g: f64, lr: f64, wd: f64) {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            self.t += 1;
            *p *= 1.0 - lr * wd;
            self.m = b1 * self.m + (1.0 - b1) * g;
            self.v = b2 * self.v + (1.0 - b2) * g * g;
            let mh = self.m / (1.0 - b1.powi(self.t as i32));
            let vh = self.v / (1.0 - b2.powi(self.t as i32));
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = DenseMatrix::from_vec(1, 2, vec![0.5, -0.25]).unwrap();
        let g = DenseMatrix::zeros(1, 2);
        let mut state = AdamState::new(0.05, 0.0, &[(1, 2)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.values(), &[0.5, -0.25]);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // g=1: m̂=1, v̂=1 → Δp = −lr/(1+eps) ≈ −lr
        let mut p = DenseMatrix::from_vec(1, 1, vec![0.0]).unwrap();
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut state = AdamState::new(0.05, 0.0, &[(1, 1)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.get(0, 0) + 0.05).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let (lr, wd) = (0.05, 0.001);
        let mut p = DenseMatrix::from_vec(1, 1, vec![0.3]).unwrap();
        let g = DenseMatrix::from_vec(1, 1, vec![0.7]).unwrap();
        let mut state = AdamState::new(lr, wd, &[(1, 1)]);
        state.step(&mut [&mut p], &[&g]).unwrap();
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(state.step_count(), 2);

        let mut oracle = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
        let mut po = 0.3;
        oracle.step(&mut po, 0.7, lr, wd);
        oracle.step(&mut po, 0.7, lr, wd);
        assert!((p.get(0, 0) - po).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = DenseMatrix::zeros(2, 2);
        let g = DenseMatrix::zeros(2, 3);
        let mut state = AdamState::new(0.05, 0.0, &[(2, 2)]);
        assert!(state.step(&mut [&mut p], &[&g]).is_err());
    }
}
