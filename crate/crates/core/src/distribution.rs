use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::Action;
use crate::scalar::Scalar;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("support has {support} actions but {probs} probabilities")]
    LengthMismatch { support: usize, probs: usize },
    #[error("negative or non-finite probability {0}")]
    BadEntry(f64),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("distributions are over different supports")]
    SupportMismatch,
    #[error("empty support")]
    Empty,
}

/// Probability distribution over an ordered list of actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution<T = f64> {
    pub support: Vec<Action>,
    pub probs: Vec<T>,
}

impl<T: Scalar> Distribution<T> {
    pub fn new(support: Vec<Action>, probs: Vec<T>) -> Result<Self, DistributionError> {
        if support.len() != probs.len() {
            return Err(DistributionError::LengthMismatch {
                support: support.len(),
                probs: probs.len(),
            });
        }
        if support.is_empty() {
            return Err(DistributionError::Empty);
        }
        for &p in &probs {
            if !(p >= T::zero()) || !p.is_finite() {
                return Err(DistributionError::BadEntry(p.to_f64_lossy()));
            }
        }
        let s: T = probs.iter().copied().sum();
        if (s - T::one()).abs() > T::lit(SUM_TOL).max(T::epsilon() * T::lit(8.0)) {
            return Err(DistributionError::NotNormalized(s.to_f64_lossy()));
        }
        Ok(Self { support, probs })
    }

    pub fn uniform(support: Vec<Action>) -> Self {
        let n = T::of_usize(support.len().max(1));
        let probs = vec![T::one() / n; support.len()];
        Self { support, probs }
    }

    /// Clamps negatives to zero and renormalizes. All-zero weights give the
    /// uniform distribution.
    pub fn from_weights(support: Vec<Action>, weights: Vec<T>) -> Result<Self, DistributionError> {
        if support.len() != weights.len() {
            return Err(DistributionError::LengthMismatch {
                support: support.len(),
                probs: weights.len(),
            });
        }
        if support.is_empty() {
            return Err(DistributionError::Empty);
        }
        let clamped: Vec<T> = weights
            .into_iter()
            .map(|w| if w.is_finite() && w > T::zero() { w } else { T::zero() })
            .collect();
        let total: T = clamped.iter().copied().sum();
        if total <= T::zero() {
            return Ok(Self::uniform(support));
        }
        Ok(Self { support, probs: clamped.into_iter().map(|w| w / total).collect() })
    }

    pub fn point(support: Vec<Action>, at: &Action) -> Result<Self, DistributionError> {
        let w = support.iter().map(|a| if a == at { T::one() } else { T::zero() }).collect();
        Self::from_weights(support, w)
    }

    pub fn prob_of(&self, action: &Action) -> T {
        self.support
            .iter()
            .position(|a| a == action)
            .map(|i| self.probs[i])
            .unwrap_or_else(T::zero)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::MoveRps;

    fn rps() -> Vec<Action> {
        MoveRps::ALL.iter().map(|&m| Action::Rps(m)).collect()
    }

    #[test]
    fn validation() {
        assert!(Distribution::new(rps(), vec![0.5, 0.25, 0.25]).is_ok());
        assert!(matches!(
            Distribution::new(rps(), vec![0.5, 0.25, 0.3]),
            Err(DistributionError::NotNormalized(_))
        ));
        assert!(Distribution::new(rps(), vec![1.5, -0.25, -0.25]).is_err());
        assert!(Distribution::new(rps(), vec![1.0]).is_err());
    }

    #[test]
    fn weights_are_clamped_and_renormalized() {
        let d = Distribution::from_weights(rps(), vec![3.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.probs, vec![0.6, 0.2, 0.2]);
        let d = Distribution::from_weights(rps(), vec![-1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.5, 0.5]);
        let u = Distribution::<f64>::from_weights(rps(), vec![0.0; 3]).unwrap();
        assert_eq!(u, Distribution::uniform(rps()));
        assert_eq!(u.prob_of(&Action::Price(3)), 0.0);
    }
}
