//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        // learning rate and betas as used throughout training here;
        // epsilon is the conventional default
        AdamParams {
            alpha: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for one list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T: Scalar> {
    pub params: AdamParams,
    pub step_count: u64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: AdamParams, shapes: &[&Tensor<T>]) -> Self {
        AdamState {
            params,
            step_count: 0,
            first_moment: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            second_moment: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// One Adam update over a parameter list. `grads` must shape-match.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension("adam: parameter list mismatch".into()));
        }
        for g in grads {
            if !g.all_finite() {
                return Err(Error::Divergence {
                    iteration: self.step_count as usize,
                    detail: "non-finite gradient".into(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.params.beta1);
        let b2 = T::from_f64(self.params.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let alpha = T::from_f64(self.params.alpha);
        let eps = T::from_f64(self.params.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::Dimension("adam: gradient shape mismatch".into()));
            }
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data().iter())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
