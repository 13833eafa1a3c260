//! Random loss inputs and a central finite-difference checker, shared by the
//! gradient tests here and the acceptance suite.
#![allow(dead_code)]

use gametalk::agents::{Decision, LinearSoftmax};
use gametalk::dialogue::TurnContent;
use gametalk::game::Player;
use gametalk::training::{Completion, LossGrad, RolloutGroup};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
/// Denominator floor of the relative error, so entries that are zero up to
/// rounding do not count as large relative errors.
pub const FD_DENOM_FLOOR: f64 = 1e-4;

/// Two stages, 2 features each, with 3 and 2 choices: 10 parameters.
pub fn tiny_model(rng: &mut ChaCha8Rng) -> LinearSoftmax<f64> {
    let mut m = LinearSoftmax::new(&[(2, 3), (2, 2)], 1.0);
    m.theta = random_theta(rng, m.dim(), 1.0);
    m
}

pub fn random_theta(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_decision(rng: &mut ChaCha8Rng, model: &LinearSoftmax<f64>) -> Decision<f64> {
    let stage = rng.gen_range(0..model.stages.len());
    let s = model.stages[stage];
    let features = (0..s.n_features).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut legal: Vec<bool> = (0..s.n_choices).map(|_| rng.gen_bool(0.8)).collect();
    let first = rng.gen_range(0..s.n_choices);
    legal[first] = true;
    let mut chosen = vec![first];
    // occasionally two legal choices produce the same output
    if let Some(second) = (0..s.n_choices).find(|&c| c != first && legal[c]) {
        if rng.gen_bool(0.2) {
            chosen.push(second);
        }
    }
    Decision { stage, features, legal, chosen }
}

/// `k` completions with 1 to 3 decisions each and integer rewards in
/// `0..=levels`. Old and reference log-probabilities come from `theta_old`
/// and `theta_ref`.
pub fn random_group(
    rng: &mut ChaCha8Rng,
    model: &LinearSoftmax<f64>,
    theta_old: &[f64],
    theta_ref: &[f64],
    k: usize,
    levels: u32,
) -> RolloutGroup<f64> {
    let completions = (0..k)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            let decisions: Vec<Decision<f64>> = (0..n).map(|_| random_decision(rng, model)).collect();
            Completion {
                content: TurnContent { think: String::new(), talk: None, play: None },
                logprob_old: model.logprob_with(theta_old, &decisions),
                logprob_ref: model.logprob_with(theta_ref, &decisions),
                decisions,
                reward: rng.gen_range(0..=levels) as f64,
            }
        })
        .collect();
    RolloutGroup { context_id: "g".into(), branch_turn: 0, player: Player::Two, context: Vec::new(), completions }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_DENOM_FLOOR)
}

/// Largest relative error between the analytic gradient of `f` at `theta`
/// and central differences, over the coordinates in `coords`.
pub fn fd_max_rel_error(f: impl Fn(&[f64]) -> LossGrad<f64>, theta: &[f64], coords: &[usize]) -> f64 {
    let analytic = f(theta).grad;
    let mut worst = 0.0f64;
    let mut t = theta.to_vec();
    for &i in coords {
        t[i] = theta[i] + FD_STEP;
        let up = f(&t).loss;
        t[i] = theta[i] - FD_STEP;
        let down = f(&t).loss;
        t[i] = theta[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

use gametalk::agents::{ScriptedAgent, TemplatePolicy};
use gametalk::dialogue::{run_episode, EpisodeOptions};
use gametalk::game::{GameKind, GameSpec};
use gametalk::training::{
    branch_and_rollout, star_select, BranchSelector, RewardContext, RewardShapingConfig, StarExample,
};

/// RPS template policy with random weights and the imitation data it
/// produces against the hint-responsive opponent.
pub fn star_case(rng: &mut ChaCha8Rng) -> (TemplatePolicy<f64>, Vec<StarExample>) {
    let mut policy = TemplatePolicy::new(GameKind::Rps, 5.0);
    policy.model.theta = random_theta(rng, policy.dim(), 0.3);
    let opponent = ScriptedAgent::hint_responsive(0.6).unwrap();
    let spec = GameSpec::rps();
    let episodes: Vec<_> = (0..6)
        .map(|_| run_episode(&spec, [&opponent, &policy], rng.gen(), &EpisodeOptions::default()).unwrap())
        .collect();
    let rewards: Vec<f64> = episodes.iter().map(|e| e.utilities_for(Player::Two).0).collect();
    let data = star_select(&episodes, &rewards, 1.0, Player::Two).unwrap();
    (policy, data)
}

/// Coordinates to probe in a large parameter vector: the `k` largest
/// analytic gradient entries plus `k` random ones.
pub fn probe_coords(rng: &mut ChaCha8Rng, grad: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grad.len()).collect();
    idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    let mut coords: Vec<usize> = idx[..k].to_vec();
    coords.extend((0..k).map(|_| rng.gen_range(0..grad.len())));
    coords
}

/// Rollout groups from real branched RPS conversations, generated by a
/// random policy whose parameters are then moved so the clip is active.
pub fn real_groups(rng: &mut ChaCha8Rng, n: usize) -> (TemplatePolicy<f64>, Vec<f64>, Vec<RolloutGroup<f64>>) {
    let mut policy = TemplatePolicy::new(GameKind::Rps, 5.0);
    policy.model.theta = random_theta(rng, policy.dim(), 0.2);
    let theta_ref = random_theta(rng, policy.dim(), 0.2);
    let opponent = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
    let ctx = RewardContext {
        trained: Player::Two,
        shaping: RewardShapingConfig::none(),
        judge: None,
        max_resamples: 3,
        always_elicit: false,
    };
    let groups = (0..n)
        .map(|_| {
            branch_and_rollout(&GameSpec::rps(), &policy, &theta_ref, &opponent, 8, rng.gen(), BranchSelector::Uniform, &ctx, "t")
                .unwrap()
                .group
        })
        .collect();
    let moved: Vec<f64> = policy.model.theta.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
    policy.model.theta = moved;
    (policy, theta_ref, groups)
}
