use serde::{Deserialize, Serialize};

use super::prompts::{self, render_setting_prompt};
use super::{serialize_turn, Conversation, TurnContent};
use crate::game::{Action, DealMove, GameKind, GameSpec, MoveRps, Player};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Coarse label of a talk text, from keyword matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TalkCategory {
    None,
    Rock,
    Paper,
    Scissors,
    Cooperative,
    Competitive,
    Number,
    Other,
}

impl TalkCategory {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn mentioned_move(self) -> Option<MoveRps> {
        match self {
            TalkCategory::Rock => Some(MoveRps::Rock),
            TalkCategory::Paper => Some(MoveRps::Paper),
            TalkCategory::Scissors => Some(MoveRps::Scissors),
            _ => None,
        }
    }
}

const COOPERATIVE: &[&str] =
    &["cooperat", "together", "agree", "fair", "both", "collu", "match", "deal", "partner"];
const COMPETITIVE: &[&str] =
    &["undercut", "lower", "cheap", "beat", "win", "compet", "aggressive", "crush"];

/// Category of a talk text. A move name wins over everything else; with several
/// move names the earliest mention counts.
pub fn talk_category(text: Option<&str>) -> TalkCategory {
    let Some(text) = text else { return TalkCategory::None };
    let lower = text.to_lowercase();
    let first_move = [
        ("rock", TalkCategory::Rock),
        ("paper", TalkCategory::Paper),
        ("scissor", TalkCategory::Scissors),
    ]
    .into_iter()
    .filter_map(|(w, c)| lower.find(w).map(|i| (i, c)))
    .min_by_key(|&(i, _)| i);
    if let Some((_, c)) = first_move {
        return c;
    }
    if COOPERATIVE.iter().any(|w| lower.contains(w)) {
        return TalkCategory::Cooperative;
    }
    if COMPETITIVE.iter().any(|w| lower.contains(w)) {
        return TalkCategory::Competitive;
    }
    if lower.chars().any(|c| c.is_ascii_digit()) {
        return TalkCategory::Number;
    }
    TalkCategory::Other
}

/// Structured summary of what one player can see. Contains nothing the
/// message list does not also reveal.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub spec: GameSpec,
    pub player: Player,
    /// 0 opening, 1 middle, 2 closing (last chance to act).
    pub phase: usize,
    /// Number of turns this player has already taken.
    pub own_turn_index: usize,
    pub interactions_left: u32,
    pub opp_last_talk: Option<String>,
    pub own_last_talk: Option<String>,
    /// Opponent's most recent action that the rules have disclosed.
    pub opp_last_revealed: Option<Action>,
    pub own_last_action: Option<Action>,
    pub must_play: bool,
    pub pending_offer: Option<DealMove>,
    pub rounds_completed: usize,
}

impl Observation {
    pub fn kind(&self) -> GameKind {
        self.spec.kind()
    }
}

/// What `player` sees: the message list sent to a chat model, plus the
/// structured observation used by template policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerView {
    pub messages: Vec<Message>,
    pub obs: Observation,
}

impl PlayerView {
    pub fn player(&self) -> Player {
        self.obs.player
    }
}

/// Opponent turn as shown to the other side. RPS and Bertrand plays stay
/// hidden; bargaining proposals are public.
fn public_content(spec: &GameSpec, content: &TurnContent) -> Option<String> {
    let talk = content.talk.as_ref().map(|t| format!("<talk> {t} </talk>"));
    let play = match spec {
        GameSpec::Bargaining(_) => content.play.map(|a| format!("<play> {a} </play>")),
        _ => None,
    };
    match (talk, play) {
        (Some(t), Some(p)) => Some(format!("{t} {p}")),
        (Some(t), None) => Some(t),
        (None, Some(p)) => Some(p),
        (None, None) => None,
    }
}

pub fn player_view(conv: &Conversation, player: Player) -> PlayerView {
    let setting = render_setting_prompt(&conv.spec, player).expect("validated spec renders");
    let mut messages =
        vec![Message { role: Role::System, content: prompts::chat_content(&setting).to_string() }];
    let push_injections = |messages: &mut Vec<Message>, position: usize| {
        for e in conv.injections.iter().filter(|e| e.position == position && e.to == player) {
            messages.push(Message { role: Role::System, content: e.text.clone() });
        }
    };
    for t in &conv.turns {
        push_injections(&mut messages, t.index);
        if t.player == player {
            messages.push(Message { role: Role::Assistant, content: serialize_turn(&t.content()) });
        } else if let Some(c) = public_content(&conv.spec, &t.content()) {
            messages.push(Message { role: Role::User, content: c });
        }
    }
    push_injections(&mut messages, conv.turns.len());
    PlayerView { messages, obs: observe(conv, player) }
}

fn observe(conv: &Conversation, player: Player) -> Observation {
    let own: Vec<_> = conv.turns.iter().filter(|t| t.player == player).collect();
    let opp: Vec<_> = conv.turns.iter().filter(|t| t.player != player).collect();
    let interactions_left = conv.interactions_left(player);
    let opp_last_revealed = match &conv.spec {
        GameSpec::Rps(_) => None,
        GameSpec::Bertrand(_) => {
            // prices of completed rounds only
            let done = conv.rounds_completed();
            opp.iter().filter_map(|t| t.play).take(done).last()
        }
        GameSpec::Bargaining(_) => opp.iter().rev().find_map(|t| t.play),
    };
    let pending_offer = conv.pending_offer(player);
    let must_play = conv.must_play(player);
    let phase = if interactions_left <= 1 || (matches!(conv.spec, GameSpec::Rps(_)) && must_play) {
        2
    } else if own.is_empty() {
        0
    } else {
        1
    };
    Observation {
        spec: conv.spec.clone(),
        player,
        phase,
        own_turn_index: own.len(),
        interactions_left,
        opp_last_talk: opp.iter().rev().find_map(|t| t.talk.clone()),
        own_last_talk: own.iter().rev().find_map(|t| t.talk.clone()),
        opp_last_revealed,
        own_last_action: own.iter().rev().find_map(|t| t.play),
        must_play,
        pending_offer,
        rounds_completed: conv.rounds_completed(),
    }
}
