
use gametalk::agents::{Decision, LinearSoftmax, ScriptedAgent, TemplatePolicy};
use gametalk::dialogue::{read_jsonl, write_jsonl, TurnContent};
use gametalk::game::{GameKind, GameSpec, Player};
use gametalk::training::{
    branch_and_rollout, evaluate, grpo_completion_loss, star_select, train_loop, BranchSelector, Completion,
    GrpoConfig, LossGrad, MetricsRow, Optimizer, RewardContext, RewardShapingConfig, TrainError, TrainObserver,
    TrainRunConfig, TrainSetup,
};

fn plain_ctx() -> RewardContext<'static> {
    RewardContext {
        trained: Player::Two,
        shaping: RewardShapingConfig::none(),
        judge: None,
        max_resamples: 3,
        always_elicit: false,
    }
}

#[test]
fn clipped_ratio_contributes_no_policy_gradient() {
    let mut model = LinearSoftmax::<f64>::new(&[(1, 2)], 1.0);
    model.theta = vec![1.0, 0.0];
    let d = Decision { stage: 0, features: vec![1.0], legal: vec![true, true], chosen: vec![0] };
    let lp = model.logprob(std::slice::from_ref(&d));
    let c = Completion {
        content: TurnContent { think: String::new(), talk: None, play: None },
        decisions: vec![d],
        reward: 1.0,
        // ratio e^0.5 > 1.2
        logprob_old: lp - 0.5,
        logprob_ref: lp,
    };
    let cfg = GrpoConfig { kl_coef: 0.0, entropy_coef: 0.0, ..GrpoConfig::default() };
    let mut out = LossGrad::zero(2);
    grpo_completion_loss(&model, &model.theta, &model.theta, &c, 1.0, 1, &cfg, &mut out);
    assert!(out.grad.iter().all(|g| *g == 0.0), "{:?}", out.grad);
    assert!((out.loss + 1.2).abs() < 1e-12);

    // inside the trust region the same term does move the parameters
    let inside = Completion { logprob_old: lp - 0.1, ..c };
    let mut out = LossGrad::zero(2);
    grpo_completion_loss(&model, &model.theta, &model.theta, &inside, 1.0, 1, &cfg, &mut out);
    assert!(out.grad.iter().any(|g| *g != 0.0));
}

#[test]
fn branches_share_the_prefix_and_rewards_vary() {
    let policy = TemplatePolicy::<f64>::new(GameKind::Rps, 5.0);
    let opponent = ScriptedAgent::biased_rps(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
    let mut varied = 0;
    for seed in 0..10 {
        let out = branch_and_rollout(
            &GameSpec::rps(),
            &policy,
            &policy.model.theta,
            &opponent,
            8,
            seed,
            BranchSelector::Uniform,
            &plain_ctx(),
            "t",
        )
        .unwrap();
        assert_eq!(out.group.completions.len(), 8);
        let t = out.group.branch_turn;
        let prefix = &out.episodes[0].turns[..t];
        assert!(out.episodes.iter().all(|e| &e.turns[..t] == prefix));
        assert!(out.episodes.iter().all(|e| e.branch.as_ref().unwrap().turn == t));
        let r = out.group.rewards();
        if r.iter().any(|x| *x != r[0]) {
            varied += 1;
        }
    }
    assert!(varied >= 8, "rewards varied in only {varied} of 10 groups");
}

#[test]
fn fixed_branch_past_the_end_has_no_branch_point() {
    let policy = TemplatePolicy::<f64>::new(GameKind::Rps, 5.0);
    let opponent = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
    let r = branch_and_rollout(&GameSpec::rps(), &policy, &policy.model.theta, &opponent, 2, 1, BranchSelector::Fixed(99), &plain_ctx(), "t");
    assert!(matches!(r, Err(TrainError::NoBranchPoint)));
}

#[test]
fn star_keeps_the_top_quantile() {
    let policy = TemplatePolicy::<f64>::new(GameKind::Rps, 5.0);
    let opponent = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
    let out = branch_and_rollout(&GameSpec::rps(), &policy, &policy.model.theta, &opponent, 8, 3, BranchSelector::Fixed(0), &plain_ctx(), "t")
        .unwrap();
    let rewards: Vec<f64> = (0..8).map(|i| i as f64).collect();
    // quantile 0.25 of 8 keeps the two best episodes
    let top = star_select(&out.episodes, &rewards, 0.25, Player::Two).unwrap();
    let best_two = star_select(&out.episodes[6..], &rewards[6..], 1.0, Player::Two).unwrap();
    assert_eq!(top, best_two);
    // an episode repeated verbatim adds no examples
    let doubled = [out.episodes[7].clone(), out.episodes[7].clone()];
    assert_eq!(star_select(&doubled, &[1.0, 1.0], 1.0, Player::Two).unwrap(), star_select(&doubled[..1], &[1.0], 1.0, Player::Two).unwrap());
    assert!(star_select(&out.episodes, &rewards[..3], 0.5, Player::Two).is_err());
}

#[derive(Default)]
struct Recorder {
    rows: Vec<MetricsRow>,
    checkpoints: Vec<usize>,
    episode_steps: Vec<usize>,
}

impl TrainObserver for Recorder {
    fn metrics(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        self.rows.push(row.clone());
        Ok(())
    }
    fn episodes(&mut self, step: usize, _: &[gametalk::dialogue::Episode]) -> Result<(), TrainError> {
        self.episode_steps.push(step);
        Ok(())
    }
    fn checkpoint(&mut self, step: usize, _: &[f64], _: &Optimizer) -> Result<(), TrainError> {
        self.checkpoints.push(step);
        Ok(())
    }
}

fn run(cfg: &TrainRunConfig) -> Recorder {
    let specs = [GameSpec::rps()];
    let opponent = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
    let mut policy = TemplatePolicy::<f64>::new(GameKind::Rps, 5.0);
    let setup = TrainSetup {
        specs: &specs,
        opponent: &opponent,
        shaping: RewardShapingConfig::none(),
        judge: None,
        theta_ref: policy.model.theta.clone(),
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut rec = Recorder::default();
    train_loop(cfg, &setup, &mut policy, &mut opt, 0, &mut rec).unwrap();
    rec
}

#[test]
fn metrics_every_twenty_steps_and_checkpoints() {
    let cfg = TrainRunConfig { steps: 40, eval_episodes: 8, batch: 2, group_size: 4, checkpoint_every: 15, ..TrainRunConfig::default() };
    let rec = run(&cfg);
    assert_eq!(rec.rows.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 20, 40]);
    assert_eq!(rec.checkpoints, [0, 15, 30, 40]);
    assert_eq!(rec.episode_steps, (0..40).collect::<Vec<_>>());
    assert!(rec.rows[0].loss.is_none());

    let zero = run(&TrainRunConfig { steps: 0, ..cfg.clone() });
    assert!(zero.rows.is_empty());
    assert_eq!(zero.checkpoints, [0]);
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainRunConfig { steps: 10, eval_every: 5, eval_episodes: 16, batch: 3, group_size: 4, seed: 12, ..TrainRunConfig::default() };
    assert_eq!(run(&cfg).rows, run(&cfg).rows);
}

#[test]
fn untrained_policy_against_uniform_scores_one() {
    let policy = TemplatePolicy::<f64>::new(GameKind::Rps, 5.0);
    let opponent = ScriptedAgent::biased_rps(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
    let ev = evaluate(&[GameSpec::rps()], &policy, &opponent, Player::Two, 2000, 1, None, 3, "t").unwrap();
    assert!((ev.reward_mean - 1.0).abs() < 0.05, "reward {}", ev.reward_mean);
    assert_eq!(ev.episodes.len(), 2000);
    let empty = evaluate(&[GameSpec::rps()], &policy, &opponent, Player::Two, 0, 1, None, 3, "t").unwrap();
    assert!(empty.episodes.is_empty());

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &ev.episodes[..5]).unwrap();
    assert_eq!(read_jsonl(&buf[..]).unwrap(), ev.episodes[..5]);
}

#[test]
fn signal_shaping_is_refused_for_bargaining() {
    let specs = [GameSpec::bargaining_fixture()];
    let opponent = ScriptedAgent::new(gametalk::agents::ScriptedKind::BargainingConcession { rate: 0.3 }).unwrap();
    let mut policy = TemplatePolicy::<f64>::new(GameKind::Bargaining, 5.0);
    let setup = TrainSetup {
        specs: &specs,
        opponent: &opponent,
        shaping: RewardShapingConfig::default(),
        judge: None,
        theta_ref: policy.model.theta.clone(),
    };
    let cfg = TrainRunConfig { steps: 1, ..TrainRunConfig::default() };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let r = train_loop(&cfg, &setup, &mut policy, &mut opt, 0, &mut ());
    assert!(matches!(r, Err(TrainError::Config(_))));
}
