use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_agent_output, player_view, Conversation, StepError, Turn, TurnContent};
use crate::agents::{AgentError, AgentPolicy, ElicitTarget};
use crate::distribution::Distribution;
use crate::game::{legal_actions, Action, Cents, DealMove, GameSpec, MoveRps, Player};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("agent unavailable: {0}")]
    AgentUnavailable(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("episode log: {0}")]
    Log(String),
    #[error("replayed outcome {replayed:?} differs from logged {logged:?}")]
    ReplayMismatch { logged: [f64; 2], replayed: Option<[f64; 2]> },
}

impl From<AgentError> for EpisodeError {
    fn from(e: AgentError) -> Self {
        EpisodeError::AgentUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Indexed by player (Player-1 first).
    pub utilities: [f64; 2],
}

/// Distributions elicited right before `player` took the game action of turn `turn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    pub turn: usize,
    pub player: Player,
    pub pi_self: Distribution,
    pub pi_belief: Distribution,
    pub pi_true: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub spec: GameSpec,
    pub seed: u64,
    pub players: Vec<String>,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
    pub algo_tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elicitations: Vec<ElicitationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchInfo>,
}

/// Where a logged episode sits inside a rollout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub group_id: String,
    /// Index of the branch-point turn.
    pub turn: usize,
    /// Training reward of this branch.
    pub reward: f64,
}

impl Episode {
    pub fn utilities_for(&self, player: Player) -> (f64, f64) {
        let u = self.outcome.utilities;
        (u[player.index()], u[player.other().index()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    /// Resamples after a parse failure before the random fallback move.
    pub max_resamples: u32,
    /// Record signal distributions before each game action of this player.
    pub elicit_for: Option<Player>,
    pub algo_tag: String,
    pub episode_id: String,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { max_resamples: 3, elicit_for: None, algo_tag: String::new(), episode_id: String::new() }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sampling stream for one attempt at one turn.
pub fn turn_seed(seed: u64, stream: u64, turn: usize, attempt: u32) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ ((turn as u64) << 8 | attempt as u64))
}

/// Seed derived from a base seed and a label, for independent sub-streams.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix(seed ^ mix(label))
}

/// Uniformly random legal move used after repeated parse failures. Prices
/// range over `0..=p_max`; proposals over `1..=3 floor(v/c)` units at a
/// price between cost and value.
pub fn fallback_action(conv: &Conversation, player: Player, rng: &mut ChaCha8Rng) -> Action {
    match &conv.spec {
        GameSpec::Rps(_) => {
            let grid = legal_actions(&conv.spec, player, false).grid();
            grid[rng.gen_range(0..grid.len())]
        }
        GameSpec::Bertrand(p) => Action::Price(rng.gen_range(0..=p.p_max.floor().max(0.0) as u32)),
        GameSpec::Bargaining(p) => {
            let accept = conv.pending_offer(player).is_some();
            let max_units = (3.0 * (p.value / p.cost).floor()).max(1.0) as u32;
            let lo = Cents::from_dollars(p.cost).0;
            let hi = Cents::from_dollars(p.value).0.max(lo);
            let n_prop = max_units as u64 * (hi - lo + 1) as u64;
            let pick = rng.gen_range(0..n_prop + accept as u64);
            if pick == n_prop {
                Action::Deal(DealMove::Accept)
            } else {
                let units = 1 + (pick / (hi - lo + 1) as u64) as u32;
                let price = Cents(lo + (pick % (hi - lo + 1) as u64) as i64);
                Action::Deal(DealMove::Propose { units, price })
            }
        }
    }
}

/// Conversation plus the signal bookkeeping that must travel with it when a
/// rollout is forked.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub conv: Conversation,
    pub elicitations: Vec<ElicitationRecord>,
    /// Each player's own distribution elicited before its last committed game
    /// action in the current round.
    committed: [Option<Distribution>; 2],
}

impl Rollout {
    pub fn new(conv: Conversation) -> Self {
        Self { conv, elicitations: Vec::new(), committed: [None, None] }
    }

    /// `k` copies sharing this prefix, each with its own sampling stream.
    /// Branch 0 keeps the root's stream.
    pub fn fork(&self, k: usize) -> Result<Vec<Rollout>, StepError> {
        let convs = fork(&self.conv, k)?;
        Ok(convs
            .into_iter()
            .map(|conv| Rollout { conv, elicitations: self.elicitations.clone(), committed: self.committed.clone() })
            .collect())
    }

    fn signal_grids(&self, player: Player) -> Option<(Vec<Action>, Vec<Action>)> {
        match self.conv.spec {
            GameSpec::Bargaining(_) => None,
            _ => Some((
                legal_actions(&self.conv.spec, player, false).grid(),
                legal_actions(&self.conv.spec, player.other(), false).grid(),
            )),
        }
    }

    /// Elicits the distributions that the signals need before the next turn.
    /// Returns the record for the trained player (if it moves now) and the
    /// mover's own distribution.
    fn pre_turn_signals(
        &self,
        agents: [&dyn AgentPolicy; 2],
        opts: &EpisodeOptions,
    ) -> Result<(Option<ElicitationRecord>, Option<Distribution>), EpisodeError> {
        let player = self.conv.next_player();
        let (Some(trained), Some((own_grid, opp_grid))) = (opts.elicit_for, self.signal_grids(player)) else {
            return Ok((None, None));
        };
        let agent = agents[player.index()];
        let view = player_view(&self.conv, player);
        let own = agent.elicit(&view, ElicitTarget::Own, &own_grid)?.dist;
        if player != trained {
            return Ok((None, Some(own)));
        }
        let pi_true = match &self.committed[player.other().index()] {
            Some(d) => d.clone(),
            None => {
                let opp_view = player_view(&self.conv, player.other());
                agents[player.other().index()].elicit(&opp_view, ElicitTarget::Own, &opp_grid)?.dist
            }
        };
        let pi_belief = agent.elicit(&view, ElicitTarget::Opponent, &opp_grid)?.dist;
        let record = ElicitationRecord {
            turn: self.conv.turns.len(),
            player,
            pi_self: own.clone(),
            pi_belief,
            pi_true,
        };
        Ok((Some(record), Some(own)))
    }

    /// Applies a turn and keeps the signal bookkeeping in sync.
    fn commit(
        &mut self,
        content: TurnContent,
        forced: bool,
        record: Option<ElicitationRecord>,
        own_before: Option<Distribution>,
    ) -> Result<(), EpisodeError> {
        let player = self.conv.next_player();
        let played = content.play.is_some();
        let rounds_before = self.conv.rounds_completed();
        self.conv.step(player, content, forced)?;
        if played {
            if let Some(r) = record {
                self.elicitations.push(r);
            }
            if own_before.is_some() {
                self.committed[player.index()] = own_before;
            }
        }
        if self.conv.rounds_completed() > rounds_before {
            self.committed = [None, None];
        }
        Ok(())
    }

    /// Applies a turn chosen outside any agent, such as a human's, without
    /// eliciting signals for it.
    pub fn apply_turn(&mut self, content: TurnContent) -> Result<(), EpisodeError> {
        self.commit(content, false, None, None)
    }

    /// Plays one turn for whoever moves next.
    pub fn step_agent(&mut self, agents: [&dyn AgentPolicy; 2], opts: &EpisodeOptions) -> Result<(), EpisodeError> {
        let player = self.conv.next_player();
        let agent = agents[player.index()];
        let view = player_view(&self.conv, player);
        let index = self.conv.turns.len();
        let (record, own_before) = self.pre_turn_signals(agents, opts)?;

        let kind = self.conv.spec.kind();
        let mut accepted: Option<(TurnContent, bool)> = None;
        for attempt in 0..=opts.max_resamples {
            let mut rng = ChaCha8Rng::seed_from_u64(turn_seed(self.conv.seed, self.conv.stream, index, attempt));
            let text = agent.act(&view, &mut rng)?;
            match parse_agent_output(&text, kind) {
                Ok(content) => match self.conv.check(player, &content) {
                    Ok(()) => {
                        accepted = Some((content, false));
                        break;
                    }
                    Err(e) => log::debug!("turn {index}: {e}; resampling"),
                },
                Err(e) => log::debug!("turn {index}: {e}; resampling"),
            }
        }
        let (content, forced) = accepted.unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(turn_seed(
                self.conv.seed,
                self.conv.stream,
                index,
                opts.max_resamples + 1,
            ));
            log::warn!("turn {index}: no valid output from {}; forcing a random move", agent.name());
            let play = fallback_action(&self.conv, player, &mut rng);
            (TurnContent { think: String::new(), talk: None, play: Some(play) }, true)
        });
        self.commit(content, forced, record, own_before)
    }

    /// Replays logged turns while eliciting distributions for `opts.elicit_for`.
    pub fn replay_eliciting(
        episode: &Episode,
        agents: [&dyn AgentPolicy; 2],
        opts: &EpisodeOptions,
    ) -> Result<Rollout, EpisodeError> {
        let mut r = Rollout::new(Conversation::new(episode.spec.clone(), episode.seed));
        for t in &episode.turns {
            let (record, own_before) = r.pre_turn_signals(agents, opts)?;
            r.commit(t.content(), t.forced, record, own_before)?;
        }
        Ok(r)
    }

    /// Runs until the conversation ends.
    pub fn run(&mut self, agents: [&dyn AgentPolicy; 2], opts: &EpisodeOptions) -> Result<(), EpisodeError> {
        while !self.conv.is_terminal() {
            self.step_agent(agents, opts)?;
        }
        Ok(())
    }

    pub fn into_episode(self, agents: [&dyn AgentPolicy; 2], opts: &EpisodeOptions) -> Episode {
        let utilities = self.conv.outcome().expect("finished conversation");
        Episode {
            episode_id: opts.episode_id.clone(),
            spec: self.conv.spec.clone(),
            seed: self.conv.seed,
            players: agents.iter().map(|a| a.name()).collect(),
            turns: self.conv.turns,
            outcome: Outcome { utilities },
            algo_tag: opts.algo_tag.clone(),
            elicitations: self.elicitations,
            branch: None,
        }
    }
}

/// Plays a full episode between `agents[0]` (Player-1) and `agents[1]` (Player-2).
pub fn run_episode(
    spec: &GameSpec,
    agents: [&dyn AgentPolicy; 2],
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<Episode, EpisodeError> {
    let mut r = Rollout::new(Conversation::new(spec.clone(), seed));
    r.run(agents, opts)?;
    Ok(r.into_episode(agents, opts))
}

/// `k` independent copies of a running conversation. Branch `i > 0` samples
/// from a stream derived from the root stream and `i`.
pub fn fork(conv: &Conversation, k: usize) -> Result<Vec<Conversation>, StepError> {
    if conv.is_terminal() {
        return Err(StepError::Terminal);
    }
    Ok((0..k)
        .map(|i| {
            let mut c = conv.clone();
            if i > 0 {
                c.stream = derive_seed(conv.stream, i as u64);
            }
            c
        })
        .collect())
}

/// Rebuilds the conversation from a logged episode and checks its outcome.
pub fn replay(episode: &Episode) -> Result<Conversation, EpisodeError> {
    let mut c = Conversation::new(episode.spec.clone(), episode.seed);
    for t in &episode.turns {
        c.step(t.player, t.content(), t.forced)?;
    }
    if c.outcome() != Some(episode.outcome.utilities) {
        return Err(EpisodeError::ReplayMismatch { logged: episode.outcome.utilities, replayed: c.outcome() });
    }
    Ok(c)
}

pub fn write_jsonl<W: Write>(mut out: W, episodes: &[Episode]) -> Result<(), EpisodeError> {
    for e in episodes {
        let line = serde_json::to_string(e).map_err(|e| EpisodeError::Log(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| EpisodeError::Log(e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Episode>, EpisodeError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| EpisodeError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EpisodeError::Log(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Move played by `player` in a finished RPS episode.
pub fn rps_move(episode: &Episode, player: Player) -> Option<MoveRps> {
    episode.turns.iter().filter(|t| t.player == player).find_map(|t| match t.play {
        Some(Action::Rps(m)) => Some(m),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Capabilities, Elicitation, ScriptedAgent, TemplatePolicy};
    use crate::dialogue::PlayerView;
    use crate::game::GameKind;

    struct Fixed(&'static str);

    impl AgentPolicy for Fixed {
        fn name(&self) -> String {
            format!("fixed({})", self.0)
        }
        fn act(&self, _: &PlayerView, _: &mut ChaCha8Rng) -> Result<String, AgentError> {
            Ok(self.0.to_string())
        }
        fn elicit(&self, _: &PlayerView, _: ElicitTarget, c: &[Action]) -> Result<Elicitation, AgentError> {
            Ok(Elicitation { dist: Distribution::uniform(c.to_vec()), fallback: false })
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
    }

    #[test]
    fn always_rock_ties() {
        let a = Fixed("<think>r</think><play>rock</play>");
        let e = run_episode(&GameSpec::rps(), [&a, &a], 1, &EpisodeOptions::default()).unwrap();
        assert_eq!(e.outcome.utilities, [1.0, 1.0]);
        assert_eq!(e.turns.len(), 2);
    }

    #[test]
    fn garbage_is_forced_to_a_random_move() {
        let bad = Fixed("no tags at all");
        let good = Fixed("<think>r</think><play>rock</play>");
        let e = run_episode(&GameSpec::rps(), [&bad, &good], 5, &EpisodeOptions::default()).unwrap();
        assert!(e.turns[0].forced);
        assert!(e.turns[0].think.is_empty());
        assert!(e.turns[0].play.is_some());
        assert!(!e.turns[1].forced);
    }

    #[test]
    fn forbidden_paper_goes_through_fallback() {
        let paper = Fixed("<think>p</think><play>paper</play>");
        let e = run_episode(&GameSpec::rps_constrained(Player::One), [&paper, &paper], 2, &EpisodeOptions::default())
            .unwrap();
        assert!(e.turns[0].forced);
        assert_ne!(e.turns[0].play, Some(Action::Rps(MoveRps::Paper)));
    }

    #[test]
    fn forks_share_prefix_and_diverge_later() {
        let p = TemplatePolicy::<f64>::new(GameKind::Rps, 1.0);
        let opp = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
        let agents: [&dyn AgentPolicy; 2] = [&opp, &p];
        let opts = EpisodeOptions::default();
        let mut root = Rollout::new(Conversation::new(GameSpec::rps(), 11));
        root.step_agent(agents, &opts).unwrap();
        let branches = root.fork(3).unwrap();
        assert_eq!(branches.len(), 3);
        let mut finished = Vec::new();
        for mut b in branches {
            assert_eq!(b.conv.turns, root.conv.turns);
            b.run(agents, &opts).unwrap();
            assert_eq!(b.conv.turns[..1], root.conv.turns[..]);
            finished.push(b);
        }
        assert_eq!(root.conv.turns.len(), 1);
        let one = fork(&root.conv, 1).unwrap();
        assert_eq!(one[0], root.conv);
    }

    #[test]
    fn jsonl_round_trip_and_replay() {
        let p = TemplatePolicy::<f64>::new(GameKind::Bertrand, 1.0);
        let opp = ScriptedAgent::new(crate::agents::ScriptedKind::BertrandTitForTat).unwrap();
        let opts = EpisodeOptions { elicit_for: Some(Player::Two), episode_id: "e0".into(), ..Default::default() };
        let e = run_episode(&GameSpec::bertrand_fixture(), [&opp, &p], 9, &opts).unwrap();
        assert_eq!(e.elicitations.len(), 5);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&e)).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![e.clone()]);
        let c = replay(&e).unwrap();
        assert_eq!(c.outcome(), Some(e.outcome.utilities));
    }

    #[test]
    fn same_seed_same_episode() {
        let p = TemplatePolicy::<f64>::new(GameKind::Rps, 1.0);
        let opp = ScriptedAgent::hint_responsive(0.6).unwrap();
        let opts = EpisodeOptions::default();
        let a = run_episode(&GameSpec::rps(), [&opp, &p], 42, &opts).unwrap();
        let b = run_episode(&GameSpec::rps(), [&opp, &p], 42, &opts).unwrap();
        assert_eq!(a, b);
    }
}
