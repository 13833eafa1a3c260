//! Conversation state machine.
//!
//! A [`Conversation`] is an ordered list of [`Turn`]s plus the system
//! injections the rules emitted along the way. Players alternate, Player-1
//! first. Every derived quantity (whose move it is, who has played, pending
//! offers, round results, the outcome) is a function of the turn list, so a
//! logged episode replays to the same state.

mod episode;
mod parse;
pub mod prompts;
mod view;

pub use episode::{
    derive_seed, BranchInfo, fallback_action, fork, read_jsonl, replay, rps_move, run_episode, turn_seed,
    write_jsonl, ElicitationRecord, Episode, EpisodeError, EpisodeOptions, Outcome, Rollout,
};
pub use parse::{parse_agent_output, serialize_turn, ParseError, TurnContent};
pub use prompts::{render_injection, render_setting_prompt, Injection, PromptError};
pub use view::{player_view, talk_category, Message, Observation, PlayerView, Role, TalkCategory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    bargaining_utilities, bertrand_round_payoff, legal_actions, rps_payoff, Action, DealMove,
    GameSpec, MoveRps, Player,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("conversation is already over")]
    Terminal,
    #[error("it is {expected:?}'s turn, not {got:?}'s")]
    OutOfTurn { expected: Player, got: Player },
    #[error("illegal move: {0}")]
    IllegalAction(String),
    #[error("{0:?} has no interactions left")]
    NoInteractionsLeft(Player),
}

/// One completed turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub player: Player,
    /// Private reasoning; empty for forced turns.
    pub think: String,
    #[serde(default)]
    pub talk: Option<String>,
    #[serde(default)]
    pub play: Option<Action>,
    #[serde(default)]
    pub forced: bool,
    /// System texts shown to `player` since its previous turn.
    #[serde(default)]
    pub injections_before: Vec<String>,
}

impl Turn {
    pub fn content(&self) -> TurnContent {
        TurnContent { think: self.think.clone(), talk: self.talk.clone(), play: self.play }
    }
}

/// System text addressed to one player, emitted once `position` turns exist.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InjectionEvent {
    pub position: usize,
    pub to: Player,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub spec: GameSpec,
    pub turns: Vec<Turn>,
    /// Episode seed; per-turn sampling streams derive from it.
    pub seed: u64,
    /// Branch tag, changed by [`fork`] so that branches sample independently.
    pub stream: u64,
    pub(crate) injections: Vec<InjectionEvent>,
    status: Status,
    /// Utilities indexed by player.
    outcome: Option<[f64; 2]>,
    rps_played: [Option<MoveRps>; 2],
    round_prices: [Option<u32>; 2],
    round_profits: Vec<[f64; 2]>,
    last_offer: Option<(Player, DealMove)>,
    agreed: Option<(u32, f64)>,
}

impl Conversation {
    pub fn new(spec: GameSpec, seed: u64) -> Self {
        Self {
            spec,
            turns: Vec::new(),
            seed,
            stream: 0,
            injections: Vec::new(),
            status: Status::Running,
            outcome: None,
            rps_played: [None, None],
            round_prices: [None, None],
            round_profits: Vec::new(),
            last_offer: None,
            agreed: None,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_terminal(&self) -> bool {
        self.status == Status::Terminal
    }

    /// Final utilities by player index, once terminal.
    pub fn outcome(&self) -> Option<[f64; 2]> {
        self.outcome
    }

    pub fn next_player(&self) -> Player {
        if self.turns.len() % 2 == 0 {
            Player::One
        } else {
            Player::Two
        }
    }

    pub fn turns_taken(&self, player: Player) -> u32 {
        self.turns.iter().filter(|t| t.player == player).count() as u32
    }

    pub fn interactions_left(&self, player: Player) -> u32 {
        self.spec.max_interactions().saturating_sub(self.turns_taken(player))
    }

    /// Whether the RPS player has already played.
    pub fn has_played(&self, player: Player) -> bool {
        self.rps_played[player.index()].is_some()
    }

    /// Profits of completed Bertrand rounds, by player.
    pub fn round_profits(&self) -> &[[f64; 2]] {
        &self.round_profits
    }

    pub fn rounds_completed(&self) -> usize {
        self.round_profits.len()
    }

    /// The opponent's most recent proposal, if `player` could accept it now.
    pub fn pending_offer(&self, player: Player) -> Option<DealMove> {
        match self.last_offer {
            Some((by, deal)) if by != player => Some(deal),
            _ => None,
        }
    }

    /// Agreed bargaining deal (units, unit price).
    pub fn agreed_deal(&self) -> Option<(u32, f64)> {
        self.agreed
    }

    /// RPS: the mover must play now, either because the opponent already
    /// played or because this is its last allowed turn.
    pub fn must_play(&self, player: Player) -> bool {
        match self.spec {
            GameSpec::Rps(_) => {
                self.has_played(player.other()) || self.interactions_left(player) <= 1
            }
            _ => true,
        }
    }

    /// Injections addressed to `player` that no turn of theirs has consumed yet.
    pub fn pending_injections(&self, player: Player) -> Vec<String> {
        let last_own = self.turns.iter().rposition(|t| t.player == player);
        self.injections
            .iter()
            .filter(|e| e.to == player && last_own.is_none_or(|i| e.position > i))
            .map(|e| e.text.clone())
            .collect()
    }

    /// Checks `content` against the rules without applying it.
    pub fn check(&self, player: Player, content: &TurnContent) -> Result<(), StepError> {
        if self.is_terminal() {
            return Err(StepError::Terminal);
        }
        let expected = self.next_player();
        if player != expected {
            return Err(StepError::OutOfTurn { expected, got: player });
        }
        if self.interactions_left(player) == 0 {
            return Err(StepError::NoInteractionsLeft(player));
        }
        let legal = legal_actions(&self.spec, player, self.pending_offer(player).is_some());
        if let Some(a) = &content.play {
            if !legal.contains(a) {
                return Err(StepError::IllegalAction(format!("{a} is not allowed here")));
            }
        }
        match self.spec {
            GameSpec::Rps(_) => {
                if content.play.is_none() && self.must_play(player) {
                    return Err(StepError::IllegalAction("a move must be played now".into()));
                }
                if content.play.is_none() && content.talk.is_none() {
                    return Err(StepError::IllegalAction("turn has neither talk nor play".into()));
                }
            }
            GameSpec::Bertrand(_) | GameSpec::Bargaining(_) => {
                if content.play.is_none() {
                    return Err(StepError::IllegalAction("every turn must carry a play".into()));
                }
            }
        }
        Ok(())
    }

    /// Appends a turn for the player whose move it is and applies its effects.
    pub fn step(&mut self, player: Player, content: TurnContent, forced: bool) -> Result<&Turn, StepError> {
        self.check(player, &content)?;
        let injections_before = self.pending_injections(player);
        let index = self.turns.len();
        self.turns.push(Turn {
            index,
            player,
            think: content.think,
            talk: content.talk,
            play: content.play,
            forced,
            injections_before,
        });
        self.apply_effects(player, content.play);
        if !self.is_terminal() && self.interactions_left(self.next_player()) == 0 {
            // no-agreement end; RPS cannot reach this because the last turn must be a play
            self.finish([0.0, 0.0]);
        }
        Ok(&self.turns[index])
    }

    fn inject(&mut self, to: Player, text: String) {
        let position = self.turns.len();
        self.injections.push(InjectionEvent { position, to, text });
    }

    fn finish(&mut self, utilities: [f64; 2]) {
        self.status = Status::Terminal;
        self.outcome = Some(utilities);
    }

    fn apply_effects(&mut self, player: Player, play: Option<Action>) {
        let Some(action) = play else { return };
        let spec = self.spec.clone();
        match (&spec, action) {
            (GameSpec::Rps(_), Action::Rps(m)) => {
                self.rps_played[player.index()] = Some(m);
                match (self.rps_played[0], self.rps_played[1]) {
                    (Some(a), Some(b)) => {
                        let u = rps_payoff::<f64>(a, b);
                        self.finish([u.u_self, u.u_other]);
                    }
                    _ => {
                        let text = render_injection(Injection::OpponentPlayed, &spec)
                            .expect("fixed template");
                        self.inject(player.other(), prompts::chat_content(&text).to_string());
                    }
                }
            }
            (GameSpec::Bertrand(p), Action::Price(price)) => {
                self.round_prices[player.index()] = Some(price);
                if let [Some(a), Some(b)] = self.round_prices {
                    let u = bertrand_round_payoff(a, b, p);
                    self.round_profits.push([u.u_self, u.u_other]);
                    self.round_prices = [None, None];
                    for (me, mine, theirs) in [(Player::One, a, b), (Player::Two, b, a)] {
                        let text = render_injection(
                            Injection::RoundResult { my_price: mine, other_price: theirs },
                            &spec,
                        )
                        .expect("fixed template");
                        self.inject(me, prompts::chat_content(&text).to_string());
                    }
                    if self.round_profits.len() as u32 >= spec.max_interactions() {
                        let total = self.round_profits.iter().fold([0.0, 0.0], |acc, r| {
                            [acc[0] + r[0], acc[1] + r[1]]
                        });
                        self.finish(total);
                    }
                }
            }
            (GameSpec::Bargaining(p), Action::Deal(deal)) => match deal {
                DealMove::Accept => {
                    let Some((_, DealMove::Propose { units, price })) = self.last_offer else {
                        unreachable!("accept validated against a pending offer")
                    };
                    let u = bargaining_utilities(Some((units, price.dollars())), p);
                    self.agreed = Some((units, price.dollars()));
                    // Player-1 sells, Player-2 buys
                    self.finish([u.u_self, u.u_other]);
                }
                DealMove::Propose { .. } => {
                    self.last_offer = Some((player, deal));
                }
            },
            _ => unreachable!("action kind validated by check()"),
        }
    }

    /// Conversation rebuilt from its first `n` turns.
    pub fn truncated(&self, n: usize) -> Conversation {
        let mut c = Conversation::new(self.spec.clone(), self.seed);
        c.stream = self.stream;
        for t in self.turns.iter().take(n) {
            c.step(t.player, t.content(), t.forced).expect("prefix of a valid conversation");
        }
        c
    }

    /// Indices of the turns taken by `player`.
    pub fn turn_indices(&self, player: Player) -> Vec<usize> {
        self.turns.iter().filter(|t| t.player == player).map(|t| t.index).collect()
    }

    /// Utilities of the final outcome from `player`'s side.
    pub fn utilities_for(&self, player: Player) -> Option<(f64, f64)> {
        self.outcome.map(|u| (u[player.index()], u[player.other().index()]))
    }
}
