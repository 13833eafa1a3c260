use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::StarExample;
use super::{Completion, RolloutGroup, TrainError};
use crate::agents::{LinearSoftmax, TemplatePolicy};
use crate::scalar::{log_sigmoid, log_sum_exp, sigmoid, Scalar};

/// Orderings enumerated by the permutation loss before it switches to sampling.
pub const MAX_ORDERINGS: usize = 1000;
/// Largest group accepted by the ranking-with-ties loss.
pub const MAX_TIES_ITEMS: usize = 16;

/// Scalar loss and its gradient with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T = f64> {
    pub loss: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> LossGrad<T> {
    pub fn zero(dim: usize) -> Self {
        Self { loss: T::zero(), grad: vec![T::zero(); dim] }
    }

    pub fn add(&mut self, other: &LossGrad<T>) {
        self.loss += other.loss;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += *o;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.loss *= s;
        for g in &mut self.grad {
            *g *= s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub clip: f64,
    pub kl_coef: f64,
    pub entropy_coef: f64,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { clip: 0.2, kl_coef: 0.1, entropy_coef: 0.0, std_floor: 1e-8 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(TrainError::Config(format!("clip must be in (0, 1), got {}", self.clip)));
        }
        if !(self.kl_coef >= 0.0 && self.entropy_coef >= 0.0 && self.std_floor > 0.0) {
            return Err(TrainError::Config("kl and entropy coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// `(r_i - mean) / max(std, floor)` with the population standard deviation.
/// A group with equal rewards yields all zeros.
pub fn grpo_advantages<T: Scalar>(rewards: &[T], std_floor: T) -> Vec<T> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = T::of_usize(rewards.len());
    let mean = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|r| (*r - mean) * (*r - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if std == T::zero() {
        return vec![T::zero(); rewards.len()];
    }
    let d = std.max(std_floor);
    rewards.iter().map(|r| (*r - mean) / d).collect()
}

fn check_logprobs<T: Scalar>(group: &RolloutGroup<T>) -> Result<(), TrainError> {
    for (i, c) in group.completions.iter().enumerate() {
        if !c.logprob_old.is_finite() || !c.logprob_ref.is_finite() || c.decisions.is_empty() {
            return Err(TrainError::MissingLogprobs(i));
        }
    }
    Ok(())
}

/// Loss of one completion, already divided by the group size `g`. Adds its
/// gradient to `out.grad`.
#[allow(clippy::too_many_arguments)]
pub fn grpo_completion_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    theta_ref: &[T],
    completion: &Completion<T>,
    advantage: T,
    g: usize,
    cfg: &GrpoConfig,
    out: &mut LossGrad<T>,
) {
    let inv_g = T::one() / T::of_usize(g);
    let eps = T::lit(cfg.clip);
    let beta = T::lit(cfg.kl_coef);
    let gamma = T::lit(cfg.entropy_coef);
    let logp = model.logprob_with(theta, &completion.decisions);
    let ratio = (logp - completion.logprob_old).exp();
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    let unclipped_term = ratio * advantage;
    let clipped_term = clipped * advantage;
    // the min picks the unclipped branch unless clipping makes it smaller
    let (surrogate, live) = if unclipped_term <= clipped_term {
        (unclipped_term, true)
    } else {
        (clipped_term, clipped == ratio)
    };
    let mut objective = surrogate;
    if live && advantage != T::zero() {
        // d(ratio A)/dtheta = ratio A dlogp
        let coeff = -inv_g * ratio * advantage;
        for d in &completion.decisions {
            model.accumulate_logprob_grad(theta, d, coeff, &mut out.grad);
        }
    }
    for d in &completion.decisions {
        if beta > T::zero() {
            objective -= beta * model.kl_with(theta, theta_ref, d);
            model.accumulate_kl_grad(theta, theta_ref, d, inv_g * beta, &mut out.grad);
        }
        if gamma > T::zero() {
            objective += gamma * model.entropy_with(theta, d);
            model.accumulate_entropy_grad(theta, d, -inv_g * gamma, &mut out.grad);
        }
    }
    out.loss -= objective * inv_g;
}

/// Negated clipped surrogate minus the exact KL to the reference plus an
/// optional entropy bonus, averaged over the group. Ratios are per sequence.
pub fn grpo_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    theta_ref: &[T],
    group: &RolloutGroup<T>,
    cfg: &GrpoConfig,
) -> Result<LossGrad<T>, TrainError> {
    let g = group.completions.len();
    if g < 2 {
        return Err(TrainError::GroupTooSmall { need: 2, got: g });
    }
    check_logprobs(group)?;
    let adv = grpo_advantages(&group.rewards(), T::lit(cfg.std_floor));
    let mut out = LossGrad::zero(theta.len());
    for (c, a) in group.completions.iter().zip(adv) {
        grpo_completion_loss(model, theta, theta_ref, c, a, g, cfg, &mut out);
    }
    Ok(out)
}

/// Whole-batch GRPO loss (mean over groups with unequal rewards) computed in one pass: every
/// decision's coefficient is collected first, then each gradient row is
/// touched once per decision. Serves as the reference for per-generation
/// accumulation.
pub fn grpo_batch_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    theta_ref: &[T],
    groups: &[RolloutGroup<T>],
    cfg: &GrpoConfig,
) -> Result<LossGrad<T>, TrainError> {
    for group in groups {
        let g = group.completions.len();
        if g < 2 {
            return Err(TrainError::GroupTooSmall { need: 2, got: g });
        }
        check_logprobs(group)?;
    }
    let live: Vec<(&RolloutGroup<T>, Vec<T>)> = groups
        .iter()
        .map(|g| (g, grpo_advantages(&g.rewards(), T::lit(cfg.std_floor))))
        .filter(|(_, a)| a.iter().any(|x| *x != T::zero()))
        .collect();
    let b = T::of_usize(live.len().max(1));
    let eps = T::lit(cfg.clip);
    let beta = T::lit(cfg.kl_coef);
    let gamma = T::lit(cfg.entropy_coef);
    let mut logprob_terms = Vec::new();
    let mut reg_terms = Vec::new();
    let mut loss = T::zero();
    for (group, adv) in live {
        let w = T::one() / (T::of_usize(group.completions.len()) * b);
        for (c, a) in group.completions.iter().zip(adv) {
            let ratio = (model.logprob_with(theta, &c.decisions) - c.logprob_old).exp();
            let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
            let (u, k) = (ratio * a, clipped * a);
            loss -= w * u.min(k);
            if (u <= k || clipped == ratio) && a != T::zero() {
                for d in &c.decisions {
                    logprob_terms.push((d, -w * ratio * a));
                }
            }
            for d in &c.decisions {
                loss += w * (beta * model.kl_with(theta, theta_ref, d) - gamma * model.entropy_with(theta, d));
                reg_terms.push((d, w));
            }
        }
    }
    let mut grad = vec![T::zero(); theta.len()];
    for (d, coeff) in logprob_terms {
        model.accumulate_logprob_grad(theta, d, coeff, &mut grad);
    }
    for (d, w) in reg_terms {
        if beta > T::zero() {
            model.accumulate_kl_grad(theta, theta_ref, d, w * beta, &mut grad);
        }
        if gamma > T::zero() {
            model.accumulate_entropy_grad(theta, d, -w * gamma, &mut grad);
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Implicit rewards `beta (log pi_theta - log pi_ref)` of every completion.
fn implicit_rewards<T: Scalar>(model: &LinearSoftmax<T>, theta: &[T], group: &RolloutGroup<T>, beta: T) -> Vec<T> {
    group
        .completions
        .iter()
        .map(|c| beta * (model.logprob_with(theta, &c.decisions) - c.logprob_ref))
        .collect()
}

/// Chains `dL/ds_i` through `s_i = beta log pi_theta(c_i) + const`.
fn backprop_scores<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    group: &RolloutGroup<T>,
    beta: T,
    dscore: &[T],
) -> Vec<T> {
    let mut grad = vec![T::zero(); theta.len()];
    for (c, ds) in group.completions.iter().zip(dscore) {
        if *ds != T::zero() {
            for d in &c.decisions {
                model.accumulate_logprob_grad(theta, d, *ds * beta, &mut grad);
            }
        }
    }
    grad
}

/// Mean `-ln sigmoid(s_w - s_l)` over every pair with differing rewards.
pub fn dpo_pairs_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    group: &RolloutGroup<T>,
    beta: T,
) -> Result<LossGrad<T>, TrainError> {
    check_logprobs(group)?;
    let s = implicit_rewards(model, theta, group, beta);
    let r = group.rewards();
    let k = r.len();
    let mut ds = vec![T::zero(); k];
    let mut loss = T::zero();
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            if r[i] == r[j] {
                continue;
            }
            let (w, l) = if r[i] > r[j] { (i, j) } else { (j, i) };
            let delta = s[w] - s[l];
            loss -= log_sigmoid(delta);
            let dd = -sigmoid(-delta);
            ds[w] += dd;
            ds[l] -= dd;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(TrainError::NoPreferencePairs);
    }
    let inv = T::one() / T::of_usize(pairs);
    loss *= inv;
    for d in &mut ds {
        *d *= inv;
    }
    let grad = backprop_scores(model, theta, group, beta, &ds);
    Ok(LossGrad { loss, grad })
}

/// Indices grouped by equal reward, best group first.
fn tie_groups<T: Scalar>(rewards: &[T]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..rewards.len()).collect();
    idx.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if rewards[g[0]] == rewards[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Plackett-Luce negative log-likelihood of `order` (best first) and its
/// gradient with respect to the scores, added into `ds`.
fn plackett_luce<T: Scalar>(s: &[T], order: &[usize], ds: &mut [T], weight: T) -> T {
    let mut nll = T::zero();
    for j in 0..order.len() {
        let rest = &order[j..];
        let scores: Vec<T> = rest.iter().map(|&i| s[i]).collect();
        let lse = log_sum_exp(&scores);
        nll += lse - s[order[j]];
        for &i in rest {
            ds[i] += weight * (s[i] - lse).exp();
        }
        ds[order[j]] -= weight;
    }
    nll
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn factorial_capped(n: usize, cap: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|v| *v <= cap)).unwrap_or(cap + 1)
}

/// Orderings consistent with the reward sort where tied items permute freely.
/// All of them when there are at most `MAX_ORDERINGS`, otherwise that many
/// drawn uniformly with `seed`.
fn consistent_orderings(groups: &[Vec<usize>], seed: u64) -> Vec<Vec<usize>> {
    let count = groups
        .iter()
        .try_fold(1usize, |acc, g| acc.checked_mul(factorial_capped(g.len(), MAX_ORDERINGS)).filter(|v| *v <= MAX_ORDERINGS));
    match count {
        Some(_) => {
            let mut out = vec![Vec::new()];
            for g in groups {
                let perms = permutations(g);
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        perms.iter().map(move |p| {
                            let mut o = prefix.clone();
                            o.extend(p);
                            o
                        })
                    })
                    .collect();
            }
            out
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..MAX_ORDERINGS)
                .map(|_| {
                    let mut o = Vec::new();
                    for g in groups {
                        let mut g = g.clone();
                        g.shuffle(&mut rng);
                        o.extend(g);
                    }
                    o
                })
                .collect()
        }
    }
}

/// Plackett-Luce loss over the reward ordering, averaged over tie orderings.
pub fn dpo_permutation_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    group: &RolloutGroup<T>,
    beta: T,
    seed: u64,
) -> Result<LossGrad<T>, TrainError> {
    let k = group.completions.len();
    if k < 2 {
        return Err(TrainError::GroupTooSmall { need: 2, got: k });
    }
    check_logprobs(group)?;
    let s = implicit_rewards(model, theta, group, beta);
    let orders = consistent_orderings(&tie_groups(&group.rewards()), seed);
    let w = T::one() / T::of_usize(orders.len());
    let mut ds = vec![T::zero(); k];
    let mut loss = T::zero();
    for o in &orders {
        loss += w * plackett_luce(&s, o, &mut ds, w);
    }
    let grad = backprop_scores(model, theta, group, beta, &ds);
    Ok(LossGrad { loss, grad })
}

/// Ranking-with-ties likelihood. Each rank level contributes the geometric
/// mean of its tie group over the sum of geometric means of subsets of the
/// items still unranked. Subsets are limited to the size of the largest tie
/// group, so a ranking without ties is exactly Plackett-Luce.
pub fn dpo_ties_loss<T: Scalar>(
    model: &LinearSoftmax<T>,
    theta: &[T],
    group: &RolloutGroup<T>,
    beta: T,
) -> Result<LossGrad<T>, TrainError> {
    let k = group.completions.len();
    if k > MAX_TIES_ITEMS {
        return Err(TrainError::RefuseTooLarge { max: MAX_TIES_ITEMS, got: k });
    }
    if k == 0 {
        return Err(TrainError::GroupTooSmall { need: 1, got: 0 });
    }
    check_logprobs(group)?;
    let s = implicit_rewards(model, theta, group, beta);
    let (loss, ds) = ties_nll(&s, &tie_groups(&group.rewards()));
    let grad = backprop_scores(model, theta, group, beta, &ds);
    Ok(LossGrad { loss, grad })
}

fn ties_nll<T: Scalar>(s: &[T], levels: &[Vec<usize>]) -> (T, Vec<T>) {
    let max_tie = levels.iter().map(Vec::len).max().unwrap_or(1);
    let mut ds = vec![T::zero(); s.len()];
    let mut loss = T::zero();
    for (l, level) in levels.iter().enumerate() {
        let remaining: Vec<usize> = levels[l..].iter().flatten().copied().collect();
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for mask in 1u32..(1 << remaining.len()) {
            if mask.count_ones() as usize <= max_tie {
                subsets.push((0..remaining.len()).filter(|b| mask >> b & 1 == 1).map(|b| remaining[b]).collect());
            }
        }
        let means: Vec<T> = subsets
            .iter()
            .map(|sub| sub.iter().map(|&i| s[i]).sum::<T>() / T::of_usize(sub.len()))
            .collect();
        let lse = log_sum_exp(&means);
        let n_level = T::of_usize(level.len());
        let num = level.iter().map(|&i| s[i]).sum::<T>() / n_level;
        loss += lse - num;
        for (sub, m) in subsets.iter().zip(&means) {
            let w = (*m - lse).exp() / T::of_usize(sub.len());
            for &i in sub {
                ds[i] += w;
            }
        }
        for &i in level {
            ds[i] -= T::one() / n_level;
        }
    }
    (loss, ds)
}

/// Mean negative log-likelihood of the recorded turns under `theta`.
pub fn star_sft_loss<T: Scalar>(
    policy: &TemplatePolicy<T>,
    theta: &[T],
    dataset: &[StarExample],
) -> Result<LossGrad<T>, TrainError> {
    let mut out = LossGrad::zero(theta.len());
    if dataset.is_empty() {
        return Ok(out);
    }
    let inv = T::one() / T::of_usize(dataset.len());
    for ex in dataset {
        let decisions = policy.decisions_for(&ex.obs, &ex.content)?;
        out.loss -= inv * policy.model.logprob_with(theta, &decisions);
        for d in &decisions {
            policy.model.accumulate_logprob_grad(theta, d, -inv, &mut out.grad);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Decision;
    use crate::dialogue::TurnContent;
    use crate::game::Player;

    fn toy_group(rewards: &[f64], model: &LinearSoftmax<f64>) -> RolloutGroup<f64> {
        let completions = rewards
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let decisions = vec![Decision {
                    stage: 0,
                    features: vec![1.0, (i as f64) * 0.3 - 0.5],
                    legal: vec![true; 5],
                    chosen: vec![i % 5],
                }];
                let lp = model.logprob(&decisions);
                Completion {
                    content: TurnContent { think: String::new(), talk: None, play: None },
                    decisions,
                    reward: *r,
                    logprob_old: lp,
                    logprob_ref: lp,
                }
            })
            .collect();
        RolloutGroup { context_id: "g".into(), branch_turn: 0, player: Player::Two, context: vec![], completions }
    }

    #[test]
    fn advantages() {
        let a = grpo_advantages::<f64>(&[2.0, 1.0, 0.0], 1e-8);
        assert!((a[0] - 1.224744871391589).abs() < 1e-12);
        assert!(a[1].abs() < 1e-15);
        assert_eq!(grpo_advantages(&[1.0, 1.0, 1.0], 1e-8), vec![0.0; 3]);
    }

    #[test]
    fn dpo_at_reference() {
        let m = LinearSoftmax::new(&[(2, 5)], 1.0);
        let g = toy_group(&[2.0, 1.0, 1.0], &m);
        let l = dpo_pairs_loss(&m, &m.theta, &g, 0.1).unwrap();
        assert!((l.loss - 2f64.ln()).abs() < 1e-12);
        let tied = toy_group(&[1.0, 1.0], &m);
        assert!(matches!(dpo_pairs_loss(&m, &m.theta, &tied, 0.1), Err(TrainError::NoPreferencePairs)));
        let p = dpo_permutation_loss(&m, &m.theta, &toy_group(&[3.0, 2.0, 1.0], &m), 0.1, 0).unwrap();
        assert!((p.loss - 6f64.ln()).abs() < 1e-12);
        let t = dpo_ties_loss(&m, &m.theta, &toy_group(&[1.0, 1.0], &m), 0.1).unwrap();
        assert!((t.loss - 3f64.ln()).abs() < 1e-12);
        let single = dpo_ties_loss(&m, &m.theta, &toy_group(&[1.0], &m), 0.1).unwrap();
        assert_eq!(single.loss, 0.0);
    }

    #[test]
    fn all_tied_permutations_enumerated() {
        let groups = tie_groups(&[1.0, 1.0, 1.0]);
        assert_eq!(consistent_orderings(&groups, 0).len(), 6);
        let big = tie_groups(&[0.0; 8]);
        assert_eq!(consistent_orderings(&big, 0).len(), MAX_ORDERINGS);
    }

    #[test]
    fn ties_refuses_large_groups() {
        let m = LinearSoftmax::new(&[(2, 5)], 1.0);
        let g = toy_group(&[0.0; 17], &m);
        assert!(matches!(dpo_ties_loss(&m, &m.theta, &g, 0.1), Err(TrainError::RefuseTooLarge { .. })));
    }
}
