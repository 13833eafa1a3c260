use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shaping::{naturalness_fraction, shaped_reward, NaturalnessJudge, RewardShapingConfig, ShapedReward};
use super::{BranchInfo, Completion, RolloutGroup, TrainError};
use crate::agents::{AgentPolicy, TemplatePolicy};
use crate::dialogue::{
    derive_seed, player_view, serialize_turn, Conversation, Episode, EpisodeOptions, Observation, Rollout,
    TurnContent,
};
use crate::game::{GameKind, GameSpec, Player};
use crate::signals::{state_from_record, SignalReport, BOUND_TOLERANCE};

const BRANCH_LABEL: u64 = 0xB4A2_C400;

/// How the branch point is chosen among the trained player's turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum BranchSelector {
    /// Uniformly over the trained player's turns in the root conversation.
    #[default]
    Uniform,
    /// The trained player's `i`-th turn (0-based).
    Fixed(usize),
}

/// Everything needed to turn a finished branch into a training reward.
#[derive(Clone, Copy)]
pub struct RewardContext<'a> {
    pub trained: Player,
    pub shaping: RewardShapingConfig,
    pub judge: Option<&'a dyn NaturalnessJudge>,
    pub max_resamples: u32,
    /// Elicit signal distributions even when the reward does not need them.
    pub always_elicit: bool,
}

impl RewardContext<'_> {
    pub fn episode_options(&self, spec: &GameSpec, algo_tag: &str, episode_id: String) -> EpisodeOptions {
        let elicit = (self.always_elicit || self.shaping.needs_signals()) && spec.kind() != GameKind::Bargaining;
        EpisodeOptions {
            max_resamples: self.max_resamples,
            elicit_for: elicit.then_some(self.trained),
            algo_tag: algo_tag.to_string(),
            episode_id,
        }
    }

    /// Signal report before the trained player's final game action.
    pub fn final_signals(&self, episode: &Episode) -> Option<SignalReport> {
        let rec = episode.elicitations.iter().rev().find(|r| r.player == self.trained)?;
        state_from_record(&episode.spec, rec).ok()?.theorem_bounds(BOUND_TOLERANCE).ok()
    }

    /// Talk texts of the trained player.
    pub fn trained_talk(&self, episode: &Episode) -> Vec<String> {
        episode.turns.iter().filter(|t| t.player == self.trained).filter_map(|t| t.talk.clone()).collect()
    }

    pub fn natural_fraction(&self, episode: &Episode) -> Option<f64> {
        let judge = self.judge?;
        match naturalness_fraction(&self.trained_talk(episode), judge) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("naturalness judge failed, no bonus for this episode: {e}");
                None
            }
        }
    }

    pub fn reward(&self, episode: &Episode) -> Result<ShapedReward, TrainError> {
        let signals = self.final_signals(episode);
        let utility = episode.utilities_for(self.trained).0;
        shaped_reward(utility, signals.as_ref(), self.natural_fraction(episode), &self.shaping)
    }

    fn agents<'b>(&self, trained: &'b dyn AgentPolicy, fixed: &'b dyn AgentPolicy) -> [&'b dyn AgentPolicy; 2] {
        match self.trained {
            Player::One => [trained, fixed],
            Player::Two => [fixed, trained],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchOutcome {
    pub group: RolloutGroup<f64>,
    pub episodes: Vec<Episode>,
    pub rewards: Vec<ShapedReward>,
}

/// Runs a root conversation, forks it `k` ways at one of the trained
/// player's turns and plays every branch to the end. The group holds the k
/// branch-point turns with the final rewards of their branches.
#[allow(clippy::too_many_arguments)]
pub fn branch_and_rollout(
    spec: &GameSpec,
    policy: &TemplatePolicy<f64>,
    theta_ref: &[f64],
    fixed: &dyn AgentPolicy,
    k: usize,
    seed: u64,
    selector: BranchSelector,
    ctx: &RewardContext<'_>,
    algo_tag: &str,
) -> Result<BranchOutcome, TrainError> {
    let agents = ctx.agents(policy, fixed);
    let group_id = format!("g{seed:016x}");
    let opts = ctx.episode_options(spec, algo_tag, group_id.clone());

    let mut root = Rollout::new(Conversation::new(spec.clone(), seed));
    let mut points = Vec::new();
    while !root.conv.is_terminal() {
        if root.conv.next_player() == ctx.trained {
            points.push(root.clone());
        }
        root.step_agent(agents, &opts)?;
    }
    if points.is_empty() {
        return Err(TrainError::NoBranchPoint);
    }
    let pick = match selector {
        BranchSelector::Uniform => ChaCha8Rng::seed_from_u64(derive_seed(seed, BRANCH_LABEL)).gen_range(0..points.len()),
        BranchSelector::Fixed(i) if i < points.len() => i,
        BranchSelector::Fixed(_) => return Err(TrainError::NoBranchPoint),
    };
    let point = points.swap_remove(pick);
    let branch_turn = point.conv.turns.len();
    let view = player_view(&point.conv, ctx.trained);

    let mut completions = Vec::with_capacity(k);
    let mut episodes = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(k);
    for (i, mut branch) in point.fork(k)?.into_iter().enumerate() {
        branch.run(agents, &opts)?;
        let turn = &branch.conv.turns[branch_turn];
        let content = turn.content();
        let decisions = policy.decisions_for(&view.obs, &content)?;
        let mut ep = branch.into_episode(agents, &EpisodeOptions { episode_id: format!("{group_id}-b{i}"), ..opts.clone() });
        let r = ctx.reward(&ep)?;
        ep.branch = Some(BranchInfo { group_id: group_id.clone(), turn: branch_turn, reward: r.total });
        completions.push(Completion {
            logprob_old: policy.model.logprob(&decisions),
            logprob_ref: policy.model.logprob_with(theta_ref, &decisions),
            content,
            decisions,
            reward: r.total,
        });
        episodes.push(ep);
        rewards.push(r);
    }
    let group = RolloutGroup { context_id: group_id, branch_turn, player: ctx.trained, context: view.messages, completions };
    Ok(BranchOutcome { group, episodes, rewards })
}

/// One imitation target: what the player saw and what it did.
#[derive(Debug, Clone, PartialEq)]
pub struct StarExample {
    pub obs: Observation,
    pub content: TurnContent,
}

/// Keeps episodes whose reward reaches the top `quantile` of the batch and
/// returns every non-forced turn of `player` in them, without exact
/// duplicates (same visible context and same turn).
pub fn star_select(
    episodes: &[Episode],
    rewards: &[f64],
    quantile: f64,
    player: Player,
) -> Result<Vec<StarExample>, TrainError> {
    if episodes.len() != rewards.len() {
        return Err(TrainError::Config("one reward per episode is required".into()));
    }
    if episodes.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let keep = ((episodes.len() as f64 * quantile).ceil() as usize).clamp(1, episodes.len());
    let threshold = sorted[keep - 1];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (ep, r) in episodes.iter().zip(rewards) {
        if *r < threshold {
            continue;
        }
        let mut conv = Conversation::new(ep.spec.clone(), ep.seed);
        for t in &ep.turns {
            if t.player == player && !t.forced {
                let view = player_view(&conv, player);
                let key = serde_json::to_string(&view.messages).expect("messages serialize")
                    + "\u{0}"
                    + &serialize_turn(&t.content());
                if seen.insert(key) {
                    out.push(StarExample { obs: view.obs, content: t.content() });
                }
            }
            conv.step(t.player, t.content(), t.forced)?;
        }
    }
    Ok(out)
}
