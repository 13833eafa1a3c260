use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// First and second moment estimates after `t` Adam steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, adam: None }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// Applies one update. A non-finite gradient leaves `theta` and the
    /// optimizer state untouched.
    pub fn step<T: Scalar>(&mut self, theta: &mut [T], grad: &[T]) -> Result<(), TrainError> {
        if grad.len() != theta.len() {
            return Err(TrainError::Config(format!("gradient has {} entries, parameters {}", grad.len(), theta.len())));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("skipping optimizer step with a non-finite gradient");
            return Err(TrainError::NonFiniteGradient);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::lit(self.lr);
                for (w, g) in theta.iter_mut().zip(grad) {
                    *w -= lr * *g;
                }
            }
            OptimizerKind::Adam => {
                let n = theta.len();
                let st = self.adam.get_or_insert_with(|| AdamState { t: 0, m: vec![0.0; n], v: vec![0.0; n] });
                st.t += 1;
                let bc1 = 1.0 - self.beta1.powi(st.t as i32);
                let bc2 = 1.0 - self.beta2.powi(st.t as i32);
                for i in 0..n {
                    let g = grad[i].to_f64_lossy();
                    st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                    st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = st.m[i] / bc1;
                    let v_hat = st.v[i] / bc2;
                    theta[i] -= T::lit(self.lr * m_hat / (v_hat.sqrt() + self.eps));
                }
            }
        }
        Ok(())
    }
}
