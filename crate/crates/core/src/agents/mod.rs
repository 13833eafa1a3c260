//! Policies behind one interface: scripted test opponents, trainable template
//! policies with exact log-probabilities, and a chat-completions client.

mod linear;
mod remote;
mod scripted;
mod template;

pub use linear::{Decision, LinearSoftmax, StageLayout};
pub use remote::{remote_chat, RemoteAgent, RemoteConfig, RemoteError};
pub use scripted::{ScriptedAgent, ScriptedKind};
pub use template::{features, FeatureSet, SupportError, TemplatePolicy, DEFAULT_LOGIT_SCALE, N_FEATURES};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dialogue::prompts::render_elicitation;
use crate::dialogue::{Message, PlayerView, Role};
use crate::distribution::Distribution;
use crate::game::{Action, Player};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent unavailable: {0}")]
    Unavailable(String),
    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),
    #[error("no legal choice in this state")]
    EmptyLegalSet,
}

/// Whose next action an elicitation asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElicitTarget {
    Own,
    Opponent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub trainable: bool,
    pub exact_logprobs: bool,
}

/// A reported distribution; `fallback` marks a uniform stand-in used because
/// the agent's answer could not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct Elicitation {
    pub dist: Distribution,
    pub fallback: bool,
}

pub trait AgentPolicy: Send + Sync {
    fn name(&self) -> String;

    /// Produces the raw tagged text of the next turn.
    fn act(&self, view: &PlayerView, rng: &mut ChaCha8Rng) -> Result<String, AgentError>;

    /// Distribution over `candidates` for the next game action of the viewer
    /// (`Own`) or of its opponent (`Opponent`). Private reasoning is not used.
    fn elicit(
        &self,
        view: &PlayerView,
        target: ElicitTarget,
        candidates: &[Action],
    ) -> Result<Elicitation, AgentError>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
}

/// Messages of `view` followed by the elicitation instruction as a user turn.
pub fn elicitation_messages(
    view: &PlayerView,
    target: ElicitTarget,
    candidates: &[Action],
) -> Vec<Message> {
    let subject = match target {
        ElicitTarget::Own => "your".to_string(),
        ElicitTarget::Opponent => format!("{}'s", view.player().other().name()),
    };
    let names: Vec<String> = candidates.iter().map(|a| a.to_string()).collect();
    let mut messages = view.messages.clone();
    messages.push(Message { role: Role::User, content: render_elicitation(&subject, &names) });
    messages
}

/// Reads `action: number` entries (separated by newlines or commas) from a
/// model reply. Negative numbers count as zero; the result is renormalized.
/// Unreadable replies give the uniform distribution with the fallback flag.
pub fn parse_elicitation(reply: &str, candidates: &[Action]) -> Elicitation {
    let mut weights = vec![0.0f64; candidates.len()];
    let mut found = false;
    for entry in reply.split(['\n', ',', ';']) {
        let Some((name, number)) = entry.rsplit_once(':') else { continue };
        let name = name.trim().trim_matches(|c: char| c == '-' || c == '*' || c == '"').trim();
        let number = number.trim().trim_end_matches('%');
        let Ok(value) = number.parse::<f64>() else { continue };
        let Ok(action) = name.parse::<Action>() else { continue };
        if let Some(i) = candidates.iter().position(|c| *c == action) {
            weights[i] += value.max(0.0);
            found = true;
        }
    }
    if !found || weights.iter().sum::<f64>() <= 0.0 {
        return Elicitation { dist: Distribution::uniform(candidates.to_vec()), fallback: true };
    }
    Elicitation {
        dist: Distribution::from_weights(candidates.to_vec(), weights).expect("lengths agree"),
        fallback: false,
    }
}

/// Default player under training.
pub const TRAINED_SIDE: Player = Player::Two;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::MoveRps;

    fn rps() -> Vec<Action> {
        MoveRps::ALL.iter().map(|&m| Action::Rps(m)).collect()
    }

    #[test]
    fn parses_comma_separated_reply() {
        let e = parse_elicitation("rock: 0.6, paper: 0.2, scissors: 0.2", &rps());
        assert!(!e.fallback);
        assert!((e.dist.probs[0] - 0.6).abs() < 1e-12);
        assert!((e.dist.probs[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn renormalizes_and_clamps() {
        let e = parse_elicitation("rock: 3\npaper: 1\nscissors: 1", &rps());
        assert_eq!(e.dist.probs, vec![0.6, 0.2, 0.2]);
        let e = parse_elicitation("Rock: 2\npaper: -1\nscissors: 2", &rps());
        assert_eq!(e.dist.probs, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn garbage_falls_back_to_uniform() {
        let e = parse_elicitation("I cannot say.", &rps());
        assert!(e.fallback);
        assert_eq!(e.dist, Distribution::uniform(rps()));
    }

    #[test]
    fn prices_and_deals() {
        let c = vec![Action::Price(150), Action::Price(185)];
        let e = parse_elicitation("$150: 0.25\n$185: 0.75", &c);
        assert_eq!(e.dist.probs, vec![0.25, 0.75]);
    }
}
