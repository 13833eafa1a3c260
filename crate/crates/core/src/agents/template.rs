//! Desk-scale trainable agent. Each turn is assembled from a finite library of
//! talk texts and action emitters; the choice at every stage is a linear
//! softmax over one-hot features of the player's observation, so the
//! probability of any turn is exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::linear::{Decision, LinearSoftmax};
use super::{AgentError, AgentPolicy, Capabilities, ElicitTarget, Elicitation};
use crate::dialogue::{serialize_turn, talk_category, Observation, PlayerView, TurnContent};
use crate::distribution::Distribution;
use crate::game::{
    bertrand_monopoly, harmonic, legal_actions, Action, Cents, DealMove, GameKind, GameSpec,
    MoveRps, Player,
};
use crate::scalar::Scalar;

pub const N_FEATURES: usize = 31;
/// Logit multiplier used unless configured otherwise. Larger values let the
/// small learning rates of the default schedule move the policy further.
pub const DEFAULT_LOGIT_SCALE: f64 = 5.0;

const RPS_TALK: [&str; 8] = [
    "I'm going with rock this time.",
    "Paper feels right to me today.",
    "Scissors it is, watch out.",
    "Good luck, may the best player win!",
    "Let's keep this friendly and fair.",
    "I have never lost this game.",
    "What are you thinking of playing?",
    "I have a good feeling about this one.",
];

const BERTRAND_TALK: [&str; 8] = [
    "Let's both keep prices high so we share the market.",
    "I plan to stay at the monopoly level.",
    "If you go low, I will undercut you.",
    "Prices are coming down this round.",
    "Matching each other seems fair.",
    "I am aiming for a healthy margin.",
    "Think about the long run with me.",
    "Let's see how the market reacts.",
];

const BARGAINING_TALK: [&str; 8] = [
    "Here is a fair offer for both of us.",
    "This is my best price.",
    "Let's meet in the middle.",
    "A larger order makes sense here.",
    "I can only do a small quantity.",
    "That is too expensive for me.",
    "You won't find a better deal elsewhere.",
    "Let's wrap this up.",
];

const PRICE_EMITTERS: usize = 10;
const DEAL_UNITS: [u32; 4] = [1, 3, 6, 10];
const SELLER_MARKUPS: [f64; 3] = [1.25, 1.75, 2.5];
const BUYER_SHARES: [f64; 3] = [0.4, 0.6, 0.8];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("turn is outside the template support: {0}")]
pub struct SupportError(pub String);

/// Identifier of the observation encoding. Only one exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSet {
    #[default]
    OneHotV1,
}

fn one_hot<T: Scalar>(out: &mut [T], start: usize, i: usize) {
    out[start + i] = T::one();
}

/// bias | phase(3) | own turn index(6) | opponent last talk(8) | own last talk(8) | opponent revealed action(5)
pub fn features<T: Scalar>(obs: &Observation) -> Vec<T> {
    let mut x = vec![T::zero(); N_FEATURES];
    x[0] = T::one();
    one_hot(&mut x, 1, obs.phase.min(2));
    one_hot(&mut x, 4, obs.own_turn_index.min(5));
    one_hot(&mut x, 10, talk_category(obs.opp_last_talk.as_deref()).index());
    one_hot(&mut x, 18, talk_category(obs.own_last_talk.as_deref()).index());
    one_hot(&mut x, 26, revealed_bucket(obs));
    x
}

fn revealed_bucket(obs: &Observation) -> usize {
    match (&obs.spec, obs.opp_last_revealed) {
        (_, None) => 0,
        (GameSpec::Rps(_), Some(Action::Rps(m))) => 1 + m.index(),
        (GameSpec::Bertrand(p), Some(Action::Price(x))) => {
            let x = x as f64;
            let m = bertrand_monopoly(p).0;
            if x <= p.cost {
                1
            } else if x <= (p.cost + m) / 2.0 {
                2
            } else if x <= m {
                3
            } else {
                4
            }
        }
        (GameSpec::Bargaining(p), Some(Action::Deal(DealMove::Propose { units, price }))) => {
            let price = price.dollars();
            if obs.player == Player::One {
                let r = price / p.cost;
                if r <= 1.0 {
                    1
                } else if r <= 1.5 {
                    2
                } else if r <= 2.5 {
                    3
                } else {
                    4
                }
            } else {
                let fair = p.value * harmonic::<f64>(units) / units as f64;
                let r = price / fair;
                if r >= 1.0 {
                    1
                } else if r >= 0.75 {
                    2
                } else if r >= 0.5 {
                    3
                } else {
                    4
                }
            }
        }
        _ => 0,
    }
}

/// Bertrand price emitters from the point of view of a firm whose reference
/// "last price" is `last`. `None` marks emitters unavailable in this state.
fn price_emitters(spec: &GameSpec, last: Option<u32>) -> [Option<u32>; PRICE_EMITTERS] {
    let GameSpec::Bertrand(p) = spec else { unreachable!("bertrand only") };
    let top = p.p_max.floor().max(0.0) as u32;
    let c = p.cost;
    let m = bertrand_monopoly(p).0;
    let at = |x: f64| Some((x.round().max(0.0) as u32).min(top));
    [
        at(c.floor() + 1.0),
        at(c + 0.2 * (m - c)),
        at(c + 0.4 * (m - c)),
        at(c + 0.6 * (m - c)),
        at(c + 0.8 * (m - c)),
        at(m),
        at(m + 0.5 * (p.p_max - m)),
        last.map(|l| l.min(top)),
        last.and_then(|l| l.checked_sub(1)).map(|l| l.min(top)),
        last.and_then(|l| l.checked_sub(5)).map(|l| l.min(top)),
    ]
}

/// Deal emitters: accept, then proposals over units x price levels. Prices come
/// from the player's private information (the seller's cost, the buyer's value).
fn deal_emitters(obs: &Observation) -> Vec<Option<DealMove>> {
    let GameSpec::Bargaining(p) = &obs.spec else { unreachable!("bargaining only") };
    let mut out = vec![obs.pending_offer.map(|_| DealMove::Accept)];
    for &units in &DEAL_UNITS {
        for k in 0..3 {
            let price = if obs.player == Player::One {
                p.cost * SELLER_MARKUPS[k]
            } else {
                p.value * harmonic::<f64>(units) / units as f64 * BUYER_SHARES[k]
            };
            out.push(Some(DealMove::Propose { units, price: Cents::from_dollars(price) }));
        }
    }
    out
}

fn think_for(content: &TurnContent) -> String {
    match (&content.talk, &content.play) {
        (_, Some(a)) => format!("I will play {a}."),
        (Some(_), None) => "I will talk first and keep my move for later.".to_string(),
        (None, None) => String::new(),
    }
}

/// Trainable template policy for one game.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePolicy<T = f64> {
    pub game: GameKind,
    pub model: LinearSoftmax<T>,
    pub feature_set: FeatureSet,
}

impl<T: Scalar> TemplatePolicy<T> {
    pub fn new(game: GameKind, logit_scale: T) -> Self {
        let f = N_FEATURES;
        let shapes: Vec<(usize, usize)> = match game {
            GameKind::Rps => vec![(f, RPS_TALK.len() + 3), (f, 3)],
            GameKind::Bertrand => {
                vec![(f, BERTRAND_TALK.len()), (f, PRICE_EMITTERS), (f, PRICE_EMITTERS)]
            }
            GameKind::Bargaining => vec![(f, BARGAINING_TALK.len()), (f, 1 + DEAL_UNITS.len() * 3)],
        };
        Self { game, model: LinearSoftmax::new(&shapes, logit_scale), feature_set: FeatureSet::OneHotV1 }
    }

    pub fn theta(&self) -> &[T] {
        &self.model.theta
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn talk_library(&self) -> &'static [&'static str] {
        match self.game {
            GameKind::Rps => &RPS_TALK,
            GameKind::Bertrand => &BERTRAND_TALK,
            GameKind::Bargaining => &BARGAINING_TALK,
        }
    }

    fn talk_decision(&self, x: &[T], legal: Vec<bool>, talk: &str, stage: usize) -> Result<Decision<T>, SupportError> {
        let lib = self.talk_library();
        let chosen: Vec<usize> = (0..lib.len()).filter(|&i| lib[i] == talk && legal[i]).collect();
        if chosen.is_empty() {
            return Err(SupportError(format!("talk `{talk}` is not a template")));
        }
        Ok(Decision { stage, features: x.to_vec(), legal, chosen })
    }

    /// Stage choices that make up `content`. The think text carries no
    /// probability: it is a fixed function of the other choices.
    pub fn decisions_for(&self, obs: &Observation, content: &TurnContent) -> Result<Vec<Decision<T>>, SupportError> {
        if obs.kind() != self.game {
            return Err(SupportError(format!("policy plays {} not {}", self.game, obs.kind())));
        }
        let x = features::<T>(obs);
        match self.game {
            GameKind::Rps => {
                let n_talk = RPS_TALK.len();
                let legal = self.rps_turn_mask(obs);
                match (&content.talk, &content.play) {
                    (None, Some(Action::Rps(m))) => {
                        let c = n_talk + m.index();
                        if !legal[c] {
                            return Err(SupportError(format!("{} is not legal here", m.as_str())));
                        }
                        Ok(vec![Decision { stage: 0, features: x, legal, chosen: vec![c] }])
                    }
                    (Some(t), None) => Ok(vec![self.talk_decision(&x, legal, t, 0)?]),
                    _ => Err(SupportError("rps template turns carry exactly one of talk or play".into())),
                }
            }
            GameKind::Bertrand => {
                let (Some(t), Some(Action::Price(price))) = (&content.talk, content.play) else {
                    return Err(SupportError("bertrand turns need talk and a price".into()));
                };
                let talk = self.talk_decision(&x, vec![true; BERTRAND_TALK.len()], t, 0)?;
                let em = price_emitters(&obs.spec, self.own_reference_price(obs));
                let legal: Vec<bool> = em.iter().map(Option::is_some).collect();
                let chosen: Vec<usize> = (0..em.len()).filter(|&i| em[i] == Some(price)).collect();
                if chosen.is_empty() {
                    return Err(SupportError(format!("no emitter produces ${price}")));
                }
                Ok(vec![talk, Decision { stage: 1, features: x, legal, chosen }])
            }
            GameKind::Bargaining => {
                let (Some(t), Some(Action::Deal(deal))) = (&content.talk, content.play) else {
                    return Err(SupportError("bargaining template turns need talk and a deal".into()));
                };
                let talk = self.talk_decision(&x, vec![true; BARGAINING_TALK.len()], t, 0)?;
                let em = deal_emitters(obs);
                let legal: Vec<bool> = em.iter().map(Option::is_some).collect();
                let chosen: Vec<usize> = (0..em.len()).filter(|&i| em[i] == Some(deal)).collect();
                if chosen.is_empty() {
                    return Err(SupportError(format!("no emitter produces `{deal:?}`")));
                }
                Ok(vec![talk, Decision { stage: 1, features: x, legal, chosen }])
            }
        }
    }

    /// The opponent-facing "last price" for the own price emitters: the
    /// opponent's last revealed price.
    fn own_reference_price(&self, obs: &Observation) -> Option<u32> {
        match obs.opp_last_revealed {
            Some(Action::Price(p)) => Some(p),
            _ => None,
        }
    }

    fn rps_turn_mask(&self, obs: &Observation) -> Vec<bool> {
        let legal = legal_actions(&obs.spec, obs.player, false).grid();
        let mut mask = vec![!obs.must_play; RPS_TALK.len()];
        mask.extend(MoveRps::ALL.iter().map(|m| legal.contains(&Action::Rps(*m))));
        mask
    }

    pub fn turn_logprob(&self, obs: &Observation, content: &TurnContent) -> Result<T, SupportError> {
        Ok(self.model.logprob(&self.decisions_for(obs, content)?))
    }

    fn sample_index(&self, probs: &[T], rng: &mut ChaCha8Rng) -> Result<usize, AgentError> {
        let total: f64 = probs.iter().map(|p| p.to_f64_lossy()).sum();
        if !(total > 0.0) {
            return Err(AgentError::EmptyLegalSet);
        }
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, p) in probs.iter().enumerate() {
            let p = p.to_f64_lossy();
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(i);
            if u < acc {
                return Ok(i);
            }
        }
        last.ok_or(AgentError::EmptyLegalSet)
    }

    /// Samples a turn. Returns its content and the decisions that score it.
    pub fn sample_turn(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<(TurnContent, Vec<Decision<T>>), AgentError> {
        let x = features::<T>(obs);
        let mut content = TurnContent { think: String::new(), talk: None, play: None };
        match self.game {
            GameKind::Rps => {
                let mask = self.rps_turn_mask(obs);
                let i = self.sample_index(&self.model.probs(0, &x, &mask), rng)?;
                if i < RPS_TALK.len() {
                    content.talk = Some(RPS_TALK[i].to_string());
                } else {
                    content.play = Some(Action::Rps(MoveRps::ALL[i - RPS_TALK.len()]));
                }
            }
            GameKind::Bertrand => {
                let t = self.sample_index(&self.model.probs(0, &x, &[true; BERTRAND_TALK.len()]), rng)?;
                content.talk = Some(BERTRAND_TALK[t].to_string());
                let em = price_emitters(&obs.spec, self.own_reference_price(obs));
                let mask: Vec<bool> = em.iter().map(Option::is_some).collect();
                let i = self.sample_index(&self.model.probs(1, &x, &mask), rng)?;
                content.play = em[i].map(Action::Price);
            }
            GameKind::Bargaining => {
                let t = self.sample_index(&self.model.probs(0, &x, &[true; BARGAINING_TALK.len()]), rng)?;
                content.talk = Some(BARGAINING_TALK[t].to_string());
                let em = deal_emitters(obs);
                let mask: Vec<bool> = em.iter().map(Option::is_some).collect();
                let i = self.sample_index(&self.model.probs(1, &x, &mask), rng)?;
                content.play = em[i].map(Action::Deal);
            }
        }
        content.think = think_for(&content);
        let decisions = self
            .decisions_for(obs, &content)
            .expect("sampled turns are inside the support");
        Ok((content, decisions))
    }

    /// Next-action distribution of the viewer, marginalized over emitters.
    pub fn own_distribution(&self, obs: &Observation, candidates: &[Action]) -> Vec<T> {
        let x = features::<T>(obs);
        let mut w = vec![T::zero(); candidates.len()];
        let mut add = |a: Action, p: T| {
            if let Some(i) = candidates.iter().position(|c| *c == a) {
                w[i] += p;
            }
        };
        match self.game {
            GameKind::Rps => {
                let mut mask = self.rps_turn_mask(obs);
                for m in mask.iter_mut().take(RPS_TALK.len()) {
                    *m = false;
                }
                let p = self.model.probs(0, &x, &mask);
                for m in MoveRps::ALL {
                    add(Action::Rps(m), p[RPS_TALK.len() + m.index()]);
                }
            }
            GameKind::Bertrand => {
                let em = price_emitters(&obs.spec, self.own_reference_price(obs));
                let mask: Vec<bool> = em.iter().map(Option::is_some).collect();
                let p = self.model.probs(1, &x, &mask);
                for (e, pi) in em.iter().zip(p) {
                    if let Some(price) = e {
                        add(Action::Price(*price), pi);
                    }
                }
            }
            GameKind::Bargaining => {
                let em = deal_emitters(obs);
                let mask: Vec<bool> = em.iter().map(Option::is_some).collect();
                let p = self.model.probs(1, &x, &mask);
                for (e, pi) in em.iter().zip(p) {
                    if let Some(d) = e {
                        add(Action::Deal(*d), pi);
                    }
                }
            }
        }
        w
    }

    /// Belief about the opponent's next action.
    pub fn belief_distribution(&self, obs: &Observation, candidates: &[Action]) -> Vec<T> {
        let x = features::<T>(obs);
        let mut w = vec![T::zero(); candidates.len()];
        match self.game {
            GameKind::Rps => {
                let opp_legal = legal_actions(&obs.spec, obs.player.other(), false).grid();
                let mask: Vec<bool> = MoveRps::ALL.iter().map(|m| opp_legal.contains(&Action::Rps(*m))).collect();
                let p = self.model.probs(1, &x, &mask);
                for (i, c) in candidates.iter().enumerate() {
                    if let Action::Rps(m) = c {
                        w[i] += p[m.index()];
                    }
                }
            }
            GameKind::Bertrand => {
                let own_last = match obs.own_last_action {
                    Some(Action::Price(p)) => Some(p),
                    _ => None,
                };
                let em = price_emitters(&obs.spec, own_last);
                let mask: Vec<bool> = em.iter().map(Option::is_some).collect();
                let p = self.model.probs(2, &x, &mask);
                for (e, pi) in em.iter().zip(p) {
                    if let Some(i) = e.and_then(|price| candidates.iter().position(|c| *c == Action::Price(price))) {
                        w[i] += pi;
                    }
                }
            }
            GameKind::Bargaining => w = vec![T::one(); candidates.len()],
        }
        w
    }
}

impl<T: Scalar> AgentPolicy for TemplatePolicy<T> {
    fn name(&self) -> String {
        format!("template_{}", self.game)
    }

    fn act(&self, view: &PlayerView, rng: &mut ChaCha8Rng) -> Result<String, AgentError> {
        let (content, _) = self.sample_turn(&view.obs, rng)?;
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
        let w = match target {
            ElicitTarget::Own => self.own_distribution(&view.obs, candidates),
            ElicitTarget::Opponent => self.belief_distribution(&view.obs, candidates),
        };
        let w: Vec<f64> = w.into_iter().map(|x| x.to_f64_lossy()).collect();
        let fallback = w.iter().sum::<f64>() <= 0.0;
        let dist = Distribution::from_weights(candidates.to_vec(), w)
            .map_err(|e| AgentError::InvalidParams(e.to_string()))?;
        Ok(Elicitation { dist, fallback })
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: true, exact_logprobs: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{player_view, Conversation};
    use rand::SeedableRng;

    fn rps() -> Vec<Action> {
        MoveRps::ALL.iter().map(|&m| Action::Rps(m)).collect()
    }

    #[test]
    fn feature_vector_is_one_hot_blocks() {
        let c = Conversation::new(GameSpec::rps(), 0);
        let x = features::<f64>(&player_view(&c, Player::One).obs);
        assert_eq!(x.len(), N_FEATURES);
        assert_eq!(x.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn uniform_theta_elicits_uniform() {
        let p = TemplatePolicy::<f64>::new(GameKind::Rps, 1.0);
        let c = Conversation::new(GameSpec::rps(), 0);
        let v = player_view(&c, Player::One);
        let e = p.elicit(&v, ElicitTarget::Own, &rps()).unwrap();
        for q in e.dist.probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constrained_side_never_plays_paper() {
        let p = TemplatePolicy::<f64>::new(GameKind::Rps, 1.0);
        let c = Conversation::new(GameSpec::rps_constrained(Player::One), 0);
        let v = player_view(&c, Player::One);
        let e = p.elicit(&v, ElicitTarget::Own, &rps()).unwrap();
        assert_eq!(e.dist.probs[1], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let (content, _) = p.sample_turn(&v.obs, &mut rng).unwrap();
            assert_ne!(content.play, Some(Action::Rps(MoveRps::Paper)));
        }
    }

    #[test]
    fn sampled_turns_rescore_to_their_logprob() {
        let mut p = TemplatePolicy::<f64>::new(GameKind::Bertrand, 1.0);
        for (i, t) in p.model.theta.iter_mut().enumerate() {
            *t = ((i * 37 % 11) as f64 - 5.0) * 0.05;
        }
        let mut c = Conversation::new(GameSpec::bertrand_fixture(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        while !c.is_terminal() {
            let pl = c.next_player();
            let v = player_view(&c, pl);
            let (content, decisions) = p.sample_turn(&v.obs, &mut rng).unwrap();
            let lp = p.turn_logprob(&v.obs, &content).unwrap();
            assert!((lp - p.model.logprob(&decisions)).abs() < 1e-15);
            assert!(lp.is_finite() && lp < 0.0);
            c.step(pl, content, false).unwrap();
        }
    }

    #[test]
    fn foreign_text_is_outside_support() {
        let p = TemplatePolicy::<f64>::new(GameKind::Rps, 1.0);
        let c = Conversation::new(GameSpec::rps(), 0);
        let obs = player_view(&c, Player::One).obs;
        let content = TurnContent { think: "x".into(), talk: Some("lol".into()), play: None };
        assert!(p.decisions_for(&obs, &content).is_err());
    }

    #[test]
    fn bargaining_accept_only_with_offer() {
        let p = TemplatePolicy::<f64>::new(GameKind::Bargaining, 1.0);
        let c = Conversation::new(GameSpec::bargaining_fixture(), 0);
        let obs = player_view(&c, Player::One).obs;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let (content, _) = p.sample_turn(&obs, &mut rng).unwrap();
            assert_ne!(content.play, Some(Action::Deal(DealMove::Accept)));
        }
    }
}
