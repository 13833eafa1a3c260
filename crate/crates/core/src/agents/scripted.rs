use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentPolicy, Capabilities, ElicitTarget, Elicitation};
use crate::dialogue::{serialize_turn, talk_category, PlayerView, TurnContent};
use crate::distribution::Distribution;
use crate::game::{
    bargaining_utilities, bertrand_monopoly, harmonic, legal_actions, Action, Cents, DealMove,
    GameSpec, Player,
};

/// Fixed opponents used for tests and desk-scale training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedKind {
    /// Talks once, then plays from a fixed distribution over (rock, paper, scissors).
    BiasedRps { probs: [f64; 3] },
    /// Plays `(1 - bias) * uniform + bias * (move beating the move the
    /// opponent's last talk mentioned)`. Talks once before playing.
    HintResponsiveRps { bias: f64 },
    /// Monopoly price in round 1, then the opponent's previous price.
    BertrandTitForTat,
    /// Targets the symmetric Nash quantity and moves its asking price from its
    /// own best extreme toward the opponent's by `rate` per turn.
    BargainingConcession { rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedAgent {
    pub kind: ScriptedKind,
}

impl ScriptedAgent {
    pub fn new(kind: ScriptedKind) -> Result<Self, AgentError> {
        match &kind {
            ScriptedKind::BiasedRps { probs } => {
                let s: f64 = probs.iter().sum();
                if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || (s - 1.0).abs() > 1e-9 {
                    return Err(AgentError::InvalidParams(format!(
                        "biased_rps probabilities {probs:?} must be non-negative and sum to 1"
                    )));
                }
            }
            ScriptedKind::HintResponsiveRps { bias } => {
                if !(0.0..=1.0).contains(bias) {
                    return Err(AgentError::InvalidParams(format!("hint bias {bias} not in [0,1]")));
                }
            }
            ScriptedKind::BargainingConcession { rate } => {
                if !(*rate > 0.0 && *rate <= 1.0) {
                    return Err(AgentError::InvalidParams(format!("concession rate {rate} not in (0,1]")));
                }
            }
            ScriptedKind::BertrandTitForTat => {}
        }
        Ok(Self { kind })
    }

    pub fn biased_rps(rock: f64, paper: f64, scissors: f64) -> Result<Self, AgentError> {
        Self::new(ScriptedKind::BiasedRps { probs: [rock, paper, scissors] })
    }

    pub fn hint_responsive(bias: f64) -> Result<Self, AgentError> {
        Self::new(ScriptedKind::HintResponsiveRps { bias })
    }

    /// Current distribution over (rock, paper, scissors), before legality masking.
    fn rps_mix(&self, view: &PlayerView) -> [f64; 3] {
        match &self.kind {
            ScriptedKind::BiasedRps { probs } => *probs,
            ScriptedKind::HintResponsiveRps { bias } => {
                let hint = talk_category(view.obs.opp_last_talk.as_deref()).mentioned_move();
                let mut p = [1.0 / 3.0; 3];
                if let Some(m) = hint {
                    for x in p.iter_mut() {
                        *x *= 1.0 - bias;
                    }
                    p[m.beaten_by().index()] += bias;
                }
                p
            }
            _ => [1.0 / 3.0; 3],
        }
    }

    fn rps_distribution(&self, view: &PlayerView) -> Distribution {
        let legal = legal_actions(&view.obs.spec, view.player(), false).grid();
        let mix = self.rps_mix(view);
        let w = legal
            .iter()
            .map(|a| match a {
                Action::Rps(m) => mix[m.index()],
                _ => 0.0,
            })
            .collect();
        Distribution::from_weights(legal, w).expect("non-empty legal set")
    }

    fn bertrand_price(&self, view: &PlayerView) -> u32 {
        let GameSpec::Bertrand(p) = &view.obs.spec else { unreachable!() };
        match view.obs.opp_last_revealed {
            Some(Action::Price(x)) => x,
            _ => bertrand_monopoly(p).0.round() as u32,
        }
    }

    fn bargaining_move(&self, view: &PlayerView, rate: f64) -> DealMove {
        let GameSpec::Bargaining(p) = &view.obs.spec else { unreachable!() };
        let units = (p.value / p.cost).floor().max(1.0) as u32;
        let h = harmonic::<f64>(units);
        let low = p.cost;
        let high = p.value * h / units as f64;
        let t = view.obs.own_turn_index as i32;
        let progress = 1.0 - (1.0 - rate).powi(t);
        let seller = view.player() == Player::One;
        let price = if seller { high - (high - low) * progress } else { low + (high - low) * progress };
        let mine = DealMove::Propose { units, price: Cents::from_dollars(price) };
        if let Some(DealMove::Propose { units: u, price: pr }) = view.obs.pending_offer {
            let own = |deal: (u32, f64)| {
                let up = bargaining_utilities(Some(deal), p);
                if seller { up.u_self } else { up.u_other }
            };
            let offered = own((u, pr.dollars()));
            let asking = own((units, Cents::from_dollars(price).dollars()));
            let last_chance = view.obs.interactions_left <= 1 && offered > 0.0;
            if offered >= asking - 1e-9 || last_chance {
                return DealMove::Accept;
            }
        }
        mine
    }
}

impl AgentPolicy for ScriptedAgent {
    fn name(&self) -> String {
        match &self.kind {
            ScriptedKind::BiasedRps { probs } => {
                format!("biased_rps({},{},{})", probs[0], probs[1], probs[2])
            }
            ScriptedKind::HintResponsiveRps { bias } => format!("hint_responsive_rps({bias})"),
            ScriptedKind::BertrandTitForTat => "bertrand_titfortat".into(),
            ScriptedKind::BargainingConcession { rate } => format!("bargaining_concession({rate})"),
        }
    }

    fn act(&self, view: &PlayerView, rng: &mut ChaCha8Rng) -> Result<String, AgentError> {
        let obs = &view.obs;
        let content = match &self.kind {
            ScriptedKind::BiasedRps { .. } | ScriptedKind::HintResponsiveRps { .. } => {
                if obs.own_turn_index == 0 && !obs.must_play {
                    TurnContent {
                        think: "Open with some small talk.".into(),
                        talk: Some("Good luck, let's have a nice game.".into()),
                        play: None,
                    }
                } else {
                    let d = self.rps_distribution(view);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = *d.support.last().expect("non-empty");
                    for (a, p) in d.support.iter().zip(&d.probs) {
                        acc += p;
                        if u < acc {
                            pick = *a;
                            break;
                        }
                    }
                    TurnContent { think: "Time to play.".into(), talk: None, play: Some(pick) }
                }
            }
            ScriptedKind::BertrandTitForTat => {
                let price = self.bertrand_price(view);
                TurnContent {
                    think: "Mirror the last price.".into(),
                    talk: Some("I will match whatever you charged last round.".into()),
                    play: Some(Action::Price(price)),
                }
            }
            ScriptedKind::BargainingConcession { rate } => {
                let deal = self.bargaining_move(view, *rate);
                let talk = match deal {
                    DealMove::Accept => "That works for me.",
                    DealMove::Propose { .. } => "Here is my offer.",
                };
                TurnContent {
                    think: "Concede a little each turn.".into(),
                    talk: Some(talk.into()),
                    play: Some(Action::Deal(deal)),
                }
            }
        };
        Ok(serialize_turn(&content))
    }

    fn elicit(
        &self,
        view: &PlayerView,
        target: ElicitTarget,
        candidates: &[Action],
    ) -> Result<Elicitation, AgentError> {
        if candidates.is_empty() {
            return Err(AgentError::EmptyLegalSet);
        }
        if target == ElicitTarget::Opponent {
            return Ok(Elicitation { dist: Distribution::uniform(candidates.to_vec()), fallback: false });
        }
        let weights: Vec<f64> = match &self.kind {
            ScriptedKind::BiasedRps { .. } | ScriptedKind::HintResponsiveRps { .. } => {
                let d = self.rps_distribution(view);
                candidates.iter().map(|a| d.prob_of(a)).collect()
            }
            ScriptedKind::BertrandTitForTat => {
                let price = self.bertrand_price(view);
                let max = candidates
                    .iter()
                    .filter_map(|a| if let Action::Price(p) = a { Some(*p) } else { None })
                    .max()
                    .unwrap_or(0);
                let target = Action::Price(price.min(max));
                candidates.iter().map(|a| if *a == target { 1.0 } else { 0.0 }).collect()
            }
            ScriptedKind::BargainingConcession { rate } => {
                let target = Action::Deal(self.bargaining_move(view, *rate));
                candidates.iter().map(|a| if *a == target { 1.0 } else { 0.0 }).collect()
            }
        };
        let dist = Distribution::from_weights(candidates.to_vec(), weights)
            .map_err(|e| AgentError::InvalidParams(e.to_string()))?;
        Ok(Elicitation { dist, fallback: false })
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: false, exact_logprobs: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{player_view, Conversation};
    use crate::game::MoveRps;
    use rand::SeedableRng;

    fn rps() -> Vec<Action> {
        MoveRps::ALL.iter().map(|&m| Action::Rps(m)).collect()
    }

    #[test]
    fn biased_reports_its_mix() {
        let a = ScriptedAgent::biased_rps(0.5, 0.25, 0.25).unwrap();
        let c = Conversation::new(GameSpec::rps(), 0);
        let v = player_view(&c, Player::One);
        let e = a.elicit(&v, ElicitTarget::Own, &rps()).unwrap();
        assert_eq!(e.dist.probs, vec![0.5, 0.25, 0.25]);
        assert!(ScriptedAgent::biased_rps(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn hint_shifts_toward_counter() {
        let a = ScriptedAgent::hint_responsive(0.6).unwrap();
        let mut c = Conversation::new(GameSpec::rps(), 0);
        let before = a.elicit(&player_view(&c, Player::One), ElicitTarget::Own, &rps()).unwrap();
        c.step(
            Player::One,
            TurnContent { think: "t".into(), talk: Some("hi".into()), play: None },
            false,
        )
        .unwrap();
        c.step(
            Player::Two,
            TurnContent { think: "t".into(), talk: Some("I'm going with rock".into()), play: None },
            false,
        )
        .unwrap();
        let after = a.elicit(&player_view(&c, Player::One), ElicitTarget::Own, &rps()).unwrap();
        assert!((after.dist.probs[1] - before.dist.probs[1] - 0.6 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((after.dist.probs[1] - (0.4 / 3.0 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn titfortat_opens_at_monopoly() {
        let a = ScriptedAgent::new(ScriptedKind::BertrandTitForTat).unwrap();
        let c = Conversation::new(GameSpec::bertrand_fixture(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let text = a.act(&player_view(&c, Player::One), &mut rng).unwrap();
        assert!(text.contains("<play> $185 </play>"));
    }

    #[test]
    fn concession_eventually_accepts() {
        let seller = ScriptedAgent::new(ScriptedKind::BargainingConcession { rate: 0.3 }).unwrap();
        let buyer = ScriptedAgent::new(ScriptedKind::BargainingConcession { rate: 0.3 }).unwrap();
        let mut c = Conversation::new(GameSpec::bargaining_fixture(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        while !c.is_terminal() {
            let p = c.next_player();
            let agent = if p == Player::One { &seller } else { &buyer };
            let text = agent.act(&player_view(&c, p), &mut rng).unwrap();
            let content = crate::dialogue::parse_agent_output(&text, c.spec.kind()).unwrap();
            c.step(p, content, false).unwrap();
        }
        assert!(c.agreed_deal().is_some());
    }
}
