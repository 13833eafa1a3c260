use serde::{Deserialize, Serialize};

use crate::scalar::{log_sum_exp, Scalar};

/// Position of one decision stage inside the flat parameter vector. Stage
/// weights form an `n_choices x n_features` row-major block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLayout {
    pub n_features: usize,
    pub n_choices: usize,
    pub offset: usize,
}

/// One sampled (or scored) choice: the stage, its input features, which
/// choices were legal and which choice indices produce the observed output.
/// Several indices appear when different emitters yield the same action.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision<T = f64> {
    pub stage: usize,
    pub features: Vec<T>,
    pub legal: Vec<bool>,
    pub chosen: Vec<usize>,
}

/// Linear-softmax policy over a set of stages sharing one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax<T = f64> {
    pub stages: Vec<StageLayout>,
    pub theta: Vec<T>,
    /// Multiplies every logit.
    pub logit_scale: T,
}

impl<T: Scalar> LinearSoftmax<T> {
    /// Stages laid out back to back, all weights zero.
    pub fn new(shapes: &[(usize, usize)], logit_scale: T) -> Self {
        let mut offset = 0;
        let stages = shapes
            .iter()
            .map(|&(n_features, n_choices)| {
                let s = StageLayout { n_features, n_choices, offset };
                offset += n_features * n_choices;
                s
            })
            .collect();
        Self { stages, theta: vec![T::zero(); offset], logit_scale }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logits_with(&self, theta: &[T], stage: usize, features: &[T]) -> Vec<T> {
        let s = self.stages[stage];
        debug_assert_eq!(features.len(), s.n_features);
        (0..s.n_choices)
            .map(|c| {
                let row = &theta[s.offset + c * s.n_features..s.offset + (c + 1) * s.n_features];
                row.iter().zip(features).map(|(w, x)| *w * *x).sum::<T>() * self.logit_scale
            })
            .collect()
    }

    /// Softmax over legal choices; illegal choices get probability exactly 0.
    pub fn probs_with(&self, theta: &[T], stage: usize, features: &[T], legal: &[bool]) -> Vec<T> {
        let logits = self.logits_with(theta, stage, features);
        let live: Vec<T> = logits.iter().zip(legal).filter(|(_, &l)| l).map(|(z, _)| *z).collect();
        if live.is_empty() {
            return vec![T::zero(); logits.len()];
        }
        let lse = log_sum_exp(&live);
        logits
            .iter()
            .zip(legal)
            .map(|(z, &l)| if l { (*z - lse).exp() } else { T::zero() })
            .collect()
    }

    pub fn probs(&self, stage: usize, features: &[T], legal: &[bool]) -> Vec<T> {
        self.probs_with(&self.theta, stage, features, legal)
    }

    /// `ln sum_{c in chosen} p_c`.
    pub fn decision_logprob_with(&self, theta: &[T], d: &Decision<T>) -> T {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        d.chosen.iter().map(|&c| p[c]).sum::<T>().ln()
    }

    pub fn logprob_with(&self, theta: &[T], decisions: &[Decision<T>]) -> T {
        decisions.iter().map(|d| self.decision_logprob_with(theta, d)).sum()
    }

    pub fn logprob(&self, decisions: &[Decision<T>]) -> T {
        self.logprob_with(&self.theta, decisions)
    }

    /// Adds `scale * d/dtheta ln P(chosen)` to `grad`.
    pub fn accumulate_logprob_grad(&self, theta: &[T], d: &Decision<T>, scale: T, grad: &mut [T]) {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        let mass: T = d.chosen.iter().map(|&c| p[c]).sum();
        let s = self.stages[d.stage];
        for c in 0..s.n_choices {
            if !d.legal[c] {
                continue;
            }
            let q = if d.chosen.contains(&c) { p[c] / mass } else { T::zero() };
            let coeff = scale * (q - p[c]) * self.logit_scale;
            self.add_row(s, c, &d.features, coeff, grad);
        }
    }

    /// Exact `KL(pi_theta || pi_ref)` at the decision's state.
    pub fn kl_with(&self, theta: &[T], theta_ref: &[T], d: &Decision<T>) -> T {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        let q = self.probs_with(theta_ref, d.stage, &d.features, &d.legal);
        p.iter()
            .zip(&q)
            .filter(|(pi, _)| **pi > T::zero())
            .map(|(pi, qi)| *pi * (pi.ln() - qi.ln()))
            .sum()
    }

    /// Adds `scale * dKL/dtheta` to `grad`. With `g_c = ln p_c - ln q_c`,
    /// `dKL/dz_c = p_c (g_c - KL)`.
    pub fn accumulate_kl_grad(&self, theta: &[T], theta_ref: &[T], d: &Decision<T>, scale: T, grad: &mut [T]) {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        let q = self.probs_with(theta_ref, d.stage, &d.features, &d.legal);
        let g: Vec<T> = p
            .iter()
            .zip(&q)
            .map(|(pi, qi)| if *pi > T::zero() { pi.ln() - qi.ln() } else { T::zero() })
            .collect();
        let kl: T = p.iter().zip(&g).map(|(pi, gi)| *pi * *gi).sum();
        let s = self.stages[d.stage];
        for c in 0..s.n_choices {
            if d.legal[c] {
                let coeff = scale * p[c] * (g[c] - kl) * self.logit_scale;
                self.add_row(s, c, &d.features, coeff, grad);
            }
        }
    }

    pub fn entropy_with(&self, theta: &[T], d: &Decision<T>) -> T {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        -p.iter().filter(|pi| **pi > T::zero()).map(|pi| *pi * pi.ln()).sum::<T>()
    }

    /// Adds `scale * dH/dtheta`; `dH/dz_c = -p_c (ln p_c + H)`.
    pub fn accumulate_entropy_grad(&self, theta: &[T], d: &Decision<T>, scale: T, grad: &mut [T]) {
        let p = self.probs_with(theta, d.stage, &d.features, &d.legal);
        let h: T = -p.iter().filter(|pi| **pi > T::zero()).map(|pi| *pi * pi.ln()).sum::<T>();
        let s = self.stages[d.stage];
        for c in 0..s.n_choices {
            if d.legal[c] && p[c] > T::zero() {
                let coeff = -scale * p[c] * (p[c].ln() + h) * self.logit_scale;
                self.add_row(s, c, &d.features, coeff, grad);
            }
        }
    }

    fn add_row(&self, s: StageLayout, c: usize, features: &[T], coeff: T, grad: &mut [T]) {
        let base = s.offset + c * s.n_features;
        for (f, x) in features.iter().enumerate() {
            grad[base + f] += coeff * *x;
        }
    }
}
