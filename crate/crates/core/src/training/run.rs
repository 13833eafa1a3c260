use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{
    dpo_pairs_loss, dpo_permutation_loss, dpo_ties_loss, grpo_advantages, grpo_completion_loss, star_sft_loss,
    GrpoConfig, LossGrad,
};
use super::optim::{Optimizer, OptimizerKind};
use super::rollout::{branch_and_rollout, star_select, BranchOutcome, BranchSelector, RewardContext};
use super::shaping::{NaturalnessJudge, RewardShapingConfig};
use super::{RolloutGroup, TrainError};
use crate::agents::{AgentPolicy, TemplatePolicy};
use crate::dialogue::{derive_seed, replay, run_episode, Episode};
use crate::game::{GameKind, GameSpec, Player};
use crate::signals::{bargaining_power, normalized_earnings, nra, win_draw_lose};

const STEP_LABEL: u64 = 0x5EED_0001;
const EVAL_LABEL: u64 = 0x5EED_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Grpo,
    DpoPairs,
    DpoPerm,
    DpoTies,
    Star,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Grpo, Algo::DpoPairs, Algo::DpoPerm, Algo::DpoTies, Algo::Star];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Grpo => "grpo",
            Algo::DpoPairs => "dpo_pairs",
            Algo::DpoPerm => "dpo_perm",
            Algo::DpoTies => "dpo_ties",
            Algo::Star => "star",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected grpo, dpo_pairs, dpo_perm, dpo_ties or star)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub algo: Algo,
    pub steps: usize,
    /// Completions per rollout group (branches per root).
    pub group_size: usize,
    /// Rollout groups per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub dpo_beta: f64,
    pub grpo: GrpoConfig,
    /// Top fraction of episodes kept for imitation.
    pub star_quantile: f64,
    pub branch: BranchSelector,
    pub max_resamples: u32,
    pub trained_side: Player,
    /// Intermediate checkpoints every this many steps; 0 keeps only the first and last.
    pub checkpoint_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Grpo,
            steps: 3000,
            group_size: 8,
            batch: 8,
            lr: 1e-4,
            optimizer: OptimizerKind::Sgd,
            eval_every: 20,
            eval_episodes: 32,
            seed: 0,
            dpo_beta: 0.1,
            grpo: GrpoConfig::default(),
            star_quantile: 0.25,
            branch: BranchSelector::Uniform,
            max_resamples: 3,
            trained_side: Player::Two,
            checkpoint_every: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.group_size < 2 && self.algo != Algo::Star {
            return bad("group_size must be at least 2");
        }
        if self.group_size == 0 || self.batch == 0 || self.eval_every == 0 {
            return bad("group_size, batch and eval_every must be positive");
        }
        if self.algo == Algo::DpoTies && self.group_size > super::MAX_TIES_ITEMS {
            return bad("dpo_ties supports at most 16 completions per group");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.dpo_beta > 0.0) {
            return bad("lr and dpo_beta must be positive");
        }
        if !(self.star_quantile > 0.0 && self.star_quantile <= 1.0) {
            return bad("star_quantile must lie in (0, 1]");
        }
        self.grpo.validate()
    }
}

/// One row of the metrics CSV. Columns that do not apply to the game are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub algo: String,
    pub game: String,
    pub reward_mean: f64,
    pub nra: f64,
    pub ise: Option<f64>,
    pub srp: Option<f64>,
    pub lo: Option<f64>,
    pub win: Option<f64>,
    pub draw: Option<f64>,
    pub lose: Option<f64>,
    pub ne: Option<f64>,
    pub bp: Option<f64>,
    pub nat_fraction: Option<f64>,
    pub loss: Option<f64>,
}

/// Evaluation metrics of the trained player over fresh episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSummary {
    pub episodes: Vec<Episode>,
    pub reward_mean: f64,
    pub nra: f64,
    pub ise: Option<f64>,
    pub srp: Option<f64>,
    pub lo: Option<f64>,
    pub win_draw_lose: Option<(f64, f64, f64)>,
    pub ne: Option<f64>,
    pub bp: Option<f64>,
    pub nat_fraction: Option<f64>,
}

impl EvalSummary {
    pub fn row(&self, step: usize, algo: &str, game: GameKind, loss: Option<f64>) -> MetricsRow {
        let wdl = self.win_draw_lose;
        MetricsRow {
            step,
            algo: algo.to_string(),
            game: game.to_string(),
            reward_mean: self.reward_mean,
            nra: self.nra,
            ise: self.ise,
            srp: self.srp,
            lo: self.lo,
            win: wdl.map(|w| w.0),
            draw: wdl.map(|w| w.1),
            lose: wdl.map(|w| w.2),
            ne: self.ne,
            bp: self.bp,
            nat_fraction: self.nat_fraction,
            loss,
        }
    }
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Plays `n` episodes of `trained` against `opponent`. Episode `i` uses game
/// `specs[i % len]` and a seed that depends only on `seed` and `i`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    specs: &[GameSpec],
    trained: &dyn AgentPolicy,
    opponent: &dyn AgentPolicy,
    side: Player,
    n: usize,
    seed: u64,
    judge: Option<&dyn NaturalnessJudge>,
    max_resamples: u32,
    algo_tag: &str,
) -> Result<EvalSummary, TrainError> {
    if n == 0 || specs.is_empty() {
        return Ok(EvalSummary::default());
    }
    let ctx = RewardContext { trained: side, shaping: RewardShapingConfig::none(), judge, max_resamples, always_elicit: true };
    let agents = match side {
        Player::One => [trained, opponent],
        Player::Two => [opponent, trained],
    };
    let episodes: Vec<Episode> = (0..n)
        .into_par_iter()
        .map(|i| {
            let spec = &specs[i % specs.len()];
            let opts = ctx.episode_options(spec, algo_tag, format!("eval-{i}"));
            run_episode(spec, agents, derive_seed(seed, EVAL_LABEL.wrapping_add(i as u64)), &opts)
        })
        .collect::<Result<_, _>>()?;

    let kind = specs[0].kind();
    let reward_mean = mean_of(episodes.iter().map(|e| e.utilities_for(side).0)).unwrap_or(0.0);
    let signals: Vec<_> = episodes.iter().filter_map(|e| ctx.final_signals(e)).collect();
    let sig = |f: fn(&crate::signals::SignalReport) -> f64| {
        if kind == GameKind::Bargaining {
            None
        } else {
            mean_of(signals.iter().map(f))
        }
    };
    let bp = if kind == GameKind::Bargaining {
        let values: Result<Vec<f64>, TrainError> = episodes
            .iter()
            .map(|e| {
                let conv = replay(e)?;
                Ok(bargaining_power(conv.agreed_deal(), &e.spec, side).unwrap_or(0.0))
            })
            .collect();
        mean_of(values?.into_iter())
    } else {
        None
    };
    let nat_fraction = judge.and_then(|_| mean_of(episodes.iter().filter_map(|e| ctx.natural_fraction(e))));
    Ok(EvalSummary {
        reward_mean,
        nra: nra(&episodes, side),
        ise: sig(|s| s.ise),
        srp: sig(|s| s.srp),
        lo: sig(|s| s.lo),
        win_draw_lose: (kind == GameKind::Rps).then(|| win_draw_lose(&episodes, side)),
        ne: mean_of(episodes.iter().filter_map(|e| normalized_earnings(e, side))),
        bp,
        nat_fraction,
        episodes,
    })
}

/// Receives the artifacts of a training run as they are produced.
pub trait TrainObserver {
    fn metrics(&mut self, _row: &MetricsRow) -> Result<(), TrainError> {
        Ok(())
    }
    fn episodes(&mut self, _step: usize, _episodes: &[Episode]) -> Result<(), TrainError> {
        Ok(())
    }
    fn checkpoint(&mut self, _step: usize, _theta: &[f64], _optimizer: &Optimizer) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects metrics rows in memory.
impl TrainObserver for Vec<MetricsRow> {
    fn metrics(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        self.push(row.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps_done: usize,
    pub last_eval: Option<EvalSummary>,
    pub last_loss: Option<f64>,
}

/// Shared inputs of a training run.
pub struct TrainSetup<'a> {
    pub specs: &'a [GameSpec],
    pub opponent: &'a dyn AgentPolicy,
    pub shaping: RewardShapingConfig,
    pub judge: Option<&'a dyn NaturalnessJudge>,
    /// Reference parameters for the KL penalty and DPO log-ratios.
    pub theta_ref: Vec<f64>,
}

/// Trains `policy` in place. Evaluates every `eval_every` steps (from step
/// 0), reports checkpoints through `observer`, and returns after `cfg.steps`
/// optimizer steps counted from `start_step`.
pub fn train_loop(
    cfg: &TrainRunConfig,
    setup: &TrainSetup<'_>,
    policy: &mut TemplatePolicy<f64>,
    optimizer: &mut Optimizer,
    start_step: usize,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    setup.shaping.validate()?;
    if setup.specs.is_empty() {
        return Err(TrainError::Config("no game instances".into()));
    }
    if setup.specs.iter().any(|s| s.kind() != policy.game) {
        return Err(TrainError::Config(format!("policy plays {} but a game instance differs", policy.game)));
    }
    if setup.shaping.needs_signals() && policy.game == GameKind::Bargaining {
        return Err(TrainError::Config("signal-based shaping is not defined for bargaining".into()));
    }
    if setup.theta_ref.len() != policy.dim() {
        return Err(TrainError::Config("reference parameters have the wrong size".into()));
    }
    let ctx = RewardContext {
        trained: cfg.trained_side,
        shaping: setup.shaping,
        judge: setup.judge,
        max_resamples: cfg.max_resamples,
        always_elicit: false,
    };
    let mut summary = TrainSummary { steps_done: 0, last_eval: None, last_loss: None };
    observer.checkpoint(start_step, &policy.model.theta, optimizer)?;
    let end = start_step + cfg.steps;
    for step in start_step..=end {
        if cfg.steps > 0 && (step - start_step) % cfg.eval_every == 0 {
            let eval = evaluate(
                setup.specs,
                &*policy,
                setup.opponent,
                cfg.trained_side,
                cfg.eval_episodes,
                cfg.seed,
                setup.judge,
                cfg.max_resamples,
                cfg.algo.as_str(),
            )?;
            observer.metrics(&eval.row(step, cfg.algo.as_str(), policy.game, summary.last_loss))?;
            summary.last_eval = Some(eval);
        }
        if step == end {
            break;
        }
        let (loss, episodes) = train_step(cfg, setup, &ctx, policy, optimizer, step)?;
        if loss.is_some() {
            summary.last_loss = loss;
        }
        observer.episodes(step, &episodes)?;
        summary.steps_done += 1;
        if cfg.checkpoint_every > 0 && (step + 1 - start_step) % cfg.checkpoint_every == 0 && step + 1 != end {
            observer.checkpoint(step + 1, &policy.model.theta, optimizer)?;
        }
    }
    if cfg.steps > 0 {
        observer.checkpoint(end, &policy.model.theta, optimizer)?;
    }
    Ok(summary)
}

fn step_seeds(cfg: &TrainRunConfig, step: usize, n: usize) -> Vec<u64> {
    let base = derive_seed(cfg.seed, STEP_LABEL ^ step as u64);
    (0..n).map(|i| derive_seed(base, i as u64)).collect()
}

/// One optimizer step. Returns the loss (None when every group was skipped)
/// and the episodes generated for it.
fn train_step(
    cfg: &TrainRunConfig,
    setup: &TrainSetup<'_>,
    ctx: &RewardContext<'_>,
    policy: &mut TemplatePolicy<f64>,
    optimizer: &mut Optimizer,
    step: usize,
) -> Result<(Option<f64>, Vec<Episode>), TrainError> {
    let algo = cfg.algo.as_str();
    let (acc, episodes) = if cfg.algo == Algo::Star {
        star_step(cfg, setup, ctx, policy, step)?
    } else {
        let seeds = step_seeds(cfg, step, cfg.batch);
        let snapshot = &*policy;
        let outcomes: Vec<Option<BranchOutcome>> = seeds
            .par_iter()
            .map(|&s| {
                let spec = &setup.specs[(s % setup.specs.len() as u64) as usize];
                match branch_and_rollout(spec, snapshot, &setup.theta_ref, setup.opponent, cfg.group_size, s, cfg.branch, ctx, algo) {
                    Ok(o) => Ok(Some(o)),
                    Err(TrainError::NoBranchPoint) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, _>>()?;
        let outcomes: Vec<BranchOutcome> = outcomes.into_iter().flatten().collect();
        let groups: Vec<&RolloutGroup<f64>> = outcomes.iter().map(|o| &o.group).collect();
        let acc = accumulate_gradients(cfg, policy, &setup.theta_ref, &groups, step)?;
        (acc, outcomes.into_iter().flat_map(|o| o.episodes).collect())
    };
    let Some(acc) = acc else { return Ok((None, episodes)) };
    match optimizer.step(&mut policy.model.theta, &acc.grad) {
        Ok(()) => Ok((Some(acc.loss), episodes)),
        Err(TrainError::NonFiniteGradient) => Ok((None, episodes)),
        Err(e) => Err(e),
    }
}

/// Mean loss over the groups that produce a learning signal, with gradients
/// accumulated one completion (GRPO) or one group (DPO) at a time. Groups
/// with equal rewards are skipped.
pub fn accumulate_gradients(
    cfg: &TrainRunConfig,
    policy: &TemplatePolicy<f64>,
    theta_ref: &[f64],
    groups: &[&RolloutGroup<f64>],
    step: usize,
) -> Result<Option<LossGrad<f64>>, TrainError> {
    let model = &policy.model;
    let theta = &model.theta;
    let mut total = LossGrad::zero(theta.len());
    let mut used = 0usize;
    for (gi, group) in groups.iter().enumerate() {
        let part = match cfg.algo {
            Algo::Grpo => {
                let adv = grpo_advantages(&group.rewards(), cfg.grpo.std_floor);
                if adv.iter().all(|a| *a == 0.0) {
                    continue;
                }
                let g = group.completions.len();
                let mut part = LossGrad::zero(theta.len());
                for (c, a) in group.completions.iter().zip(adv) {
                    let mut one = LossGrad::zero(theta.len());
                    grpo_completion_loss(model, theta, theta_ref, c, a, g, &cfg.grpo, &mut one);
                    part.add(&one);
                }
                part
            }
            Algo::DpoPairs => match dpo_pairs_loss(model, theta, group, cfg.dpo_beta) {
                Ok(l) => l,
                Err(TrainError::NoPreferencePairs) => continue,
                Err(e) => return Err(e),
            },
            Algo::DpoPerm => {
                if all_tied(group) {
                    continue;
                }
                let seed = derive_seed(cfg.seed ^ step as u64, gi as u64);
                dpo_permutation_loss(model, theta, group, cfg.dpo_beta, seed)?
            }
            Algo::DpoTies => {
                if all_tied(group) {
                    continue;
                }
                dpo_ties_loss(model, theta, group, cfg.dpo_beta)?
            }
            Algo::Star => unreachable!("star does not use rollout groups"),
        };
        total.add(&part);
        used += 1;
    }
    if used == 0 {
        return Ok(None);
    }
    total.scale(1.0 / used as f64);
    Ok(Some(total))
}

fn all_tied(group: &RolloutGroup<f64>) -> bool {
    let r = group.rewards();
    r.iter().all(|x| *x == r[0])
}

fn star_step(
    cfg: &TrainRunConfig,
    setup: &TrainSetup<'_>,
    ctx: &RewardContext<'_>,
    policy: &TemplatePolicy<f64>,
    step: usize,
) -> Result<(Option<LossGrad<f64>>, Vec<Episode>), TrainError> {
    let n = cfg.batch * cfg.group_size;
    let seeds = step_seeds(cfg, step, n);
    let agents = match ctx.trained {
        Player::One => [policy as &dyn AgentPolicy, setup.opponent],
        Player::Two => [setup.opponent, policy as &dyn AgentPolicy],
    };
    let results: Vec<(Episode, f64)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let spec = &setup.specs[(s % setup.specs.len() as u64) as usize];
            let opts = ctx.episode_options(spec, cfg.algo.as_str(), format!("s{step}-{i}"));
            let ep = run_episode(spec, agents, s, &opts)?;
            let r = ctx.reward(&ep)?.total;
            Ok::<_, TrainError>((ep, r))
        })
        .collect::<Result<_, _>>()?;
    let (episodes, rewards): (Vec<Episode>, Vec<f64>) = results.into_iter().unzip();
    let data = star_select(&episodes, &rewards, cfg.star_quantile, ctx.trained)?;
    if data.is_empty() {
        return Ok((None, episodes));
    }
    Ok((Some(star_sft_loss(policy, &policy.model.theta, &data)?), episodes))
}
