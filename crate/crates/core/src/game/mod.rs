//! Game rules, payoffs and analytic baselines for the three environments:
//! Rock-Paper-Scissors, the repeated Bertrand duopoly and the size-price
//! bargaining game.
//!
//! Everything here is pure. Payoff functions are generic over [`Scalar`] so
//! they can be evaluated in `f32` or `f64`; the [`GameSpec`] carried through
//! conversations stores `f64` parameters.

pub(crate) mod action;
mod instances;
mod payoff;

pub use action::{Action, ActionParseError, Cents, DealMove, MoveRps};
pub use instances::{
    generate_bargaining_instances, generate_bertrand_instances, load_bargaining_csv,
    load_bertrand_csv, BargainingRow, BertrandRow,
};
pub use payoff::{
    bargaining_nash_solution, bargaining_utilities, bertrand_demand, bertrand_monopoly,
    bertrand_round_payoff, harmonic, rps_payoff, UtilityPair,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid game parameters: {0}")]
    InvalidSpec(String),
    #[error("no bargaining surplus: value {value} does not exceed cost {cost}")]
    NoSurplus { value: f64, cost: f64 },
    #[error("instance file: {0}")]
    Instances(String),
}

/// One of the two seats at the table. Player-1 always opens the conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    /// Display name used in prompts: `Player-1` / `Player-2`.
    pub fn name(self) -> &'static str {
        match self {
            Player::One => "Player-1",
            Player::Two => "Player-2",
        }
    }
}

impl TryFrom<u8> for Player {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Player::One),
            2 => Ok(Player::Two),
            _ => Err(format!("player must be 1 or 2, got {v}")),
        }
    }
}

impl From<Player> for u8 {
    fn from(p: Player) -> u8 {
        p.index() as u8 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Rps,
    Bertrand,
    Bargaining,
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GameKind::Rps => "rps",
            GameKind::Bertrand => "bertrand",
            GameKind::Bargaining => "bargaining",
        })
    }
}

impl std::str::FromStr for GameKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rps" | "rock-paper-scissors" => Ok(GameKind::Rps),
            "bertrand" => Ok(GameKind::Bertrand),
            "bargaining" => Ok(GameKind::Bargaining),
            other => Err(format!("unknown game `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpsParams {
    /// Player that may not play paper, if any.
    #[serde(default)]
    pub constrained: Option<Player>,
    pub max_interactions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertrandParams<T = f64> {
    pub product: String,
    pub cost: T,
    /// `d` in `D(p) = max(0, (p_max - p) / d)`.
    pub demand_slope: T,
    pub p_max: T,
    pub rounds: u32,
    pub max_interactions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargainingParams<T = f64> {
    pub product: String,
    pub cost: T,
    pub value: T,
    pub max_interactions: u32,
}

/// Parameters and rules of one game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameSpec {
    Rps(RpsParams),
    Bertrand(BertrandParams),
    Bargaining(BargainingParams),
}

pub const DEFAULT_MAX_INTERACTIONS: u32 = 5;

impl GameSpec {
    pub fn rps() -> Self {
        GameSpec::Rps(RpsParams { constrained: None, max_interactions: DEFAULT_MAX_INTERACTIONS })
    }

    pub fn rps_constrained(player: Player) -> Self {
        GameSpec::Rps(RpsParams {
            constrained: Some(player),
            max_interactions: DEFAULT_MAX_INTERACTIONS,
        })
    }

    /// Bertrand instance used in the example conversations (Luxury Face Creams).
    pub fn bertrand_fixture() -> Self {
        GameSpec::Bertrand(BertrandParams {
            product: "Luxury Face Creams".into(),
            cost: 70.0,
            demand_slope: 0.2,
            p_max: 300.0,
            rounds: DEFAULT_MAX_INTERACTIONS,
            max_interactions: DEFAULT_MAX_INTERACTIONS,
        })
    }

    /// Bargaining instance used in the example conversations (hiking boots).
    pub fn bargaining_fixture() -> Self {
        GameSpec::Bargaining(BargainingParams {
            product: "Waterproof Hiking Boots".into(),
            cost: 40.0,
            value: 250.0,
            max_interactions: DEFAULT_MAX_INTERACTIONS,
        })
    }

    pub fn kind(&self) -> GameKind {
        match self {
            GameSpec::Rps(_) => GameKind::Rps,
            GameSpec::Bertrand(_) => GameKind::Bertrand,
            GameSpec::Bargaining(_) => GameKind::Bargaining,
        }
    }

    pub fn max_interactions(&self) -> u32 {
        match self {
            GameSpec::Rps(p) => p.max_interactions,
            GameSpec::Bertrand(p) => p.rounds.min(p.max_interactions),
            GameSpec::Bargaining(p) => p.max_interactions,
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::InvalidSpec(m.to_string()));
        match self {
            GameSpec::Rps(p) => {
                if p.max_interactions < 1 {
                    return bad("max_interactions must be >= 1");
                }
            }
            GameSpec::Bertrand(p) => {
                if !(p.cost > 0.0) {
                    return bad("bertrand cost must be > 0");
                }
                if !(p.p_max > p.cost) {
                    return bad("bertrand p_max must exceed cost");
                }
                if !(p.demand_slope > 0.0) {
                    return bad("bertrand demand slope must be > 0");
                }
                if p.rounds < 1 || p.max_interactions < 1 {
                    return bad("bertrand rounds must be >= 1");
                }
            }
            GameSpec::Bargaining(p) => {
                if !(p.cost > 0.0) {
                    return bad("bargaining cost must be > 0");
                }
                if !(p.value > p.cost) {
                    return bad("bargaining value must exceed cost");
                }
                if p.max_interactions < 1 {
                    return bad("max_interactions must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Largest gap between any two stage payoffs of one player, the constant
    /// `C` in the utility bounds. RPS: 2. Bertrand: one round at the monopoly
    /// price minus the worst (pricing at zero) loss. Bargaining is not scored.
    pub fn payoff_range(&self) -> f64 {
        match self {
            GameSpec::Rps(_) => 2.0,
            GameSpec::Bertrand(p) => {
                let (_, best) = bertrand_monopoly(p);
                let worst = (0.0 - p.cost) * bertrand_demand(0.0, p);
                best - worst
            }
            GameSpec::Bargaining(p) => p.value - p.cost,
        }
    }
}

/// Moves a player may use at a given point of the game.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Rps(Vec<MoveRps>),
    /// Any non-negative integer price; belief and leverage grids use `0..=grid_max`.
    Prices { grid_max: u32 },
    /// Any proposal with at least one unit; `accept` only when an offer is pending.
    Deals { accept_allowed: bool },
}

impl ActionSpace {
    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Rps(moves), Action::Rps(m)) => moves.contains(m),
            (ActionSpace::Prices { .. }, Action::Price(_)) => true,
            (ActionSpace::Deals { accept_allowed }, Action::Deal(d)) => match d {
                DealMove::Accept => *accept_allowed,
                DealMove::Propose { units, price } => *units >= 1 && price.0 >= 0,
            },
            _ => false,
        }
    }

    /// Finite candidate grid used when eliciting or scoring distributions.
    pub fn grid(&self) -> Vec<Action> {
        match self {
            ActionSpace::Rps(moves) => moves.iter().copied().map(Action::Rps).collect(),
            ActionSpace::Prices { grid_max } => (0..=*grid_max).map(Action::Price).collect(),
            ActionSpace::Deals { .. } => Vec::new(),
        }
    }
}

/// Legal moves for `player`. `offer_pending` tells whether the opponent's
/// most recent turn carried a bargaining proposal.
pub fn legal_actions(spec: &GameSpec, player: Player, offer_pending: bool) -> ActionSpace {
    match spec {
        GameSpec::Rps(p) => {
            if p.constrained == Some(player) {
                ActionSpace::Rps(vec![MoveRps::Rock, MoveRps::Scissors])
            } else {
                ActionSpace::Rps(MoveRps::ALL.to_vec())
            }
        }
        GameSpec::Bertrand(p) => ActionSpace::Prices { grid_max: p.p_max.floor().max(0.0) as u32 },
        GameSpec::Bargaining(_) => ActionSpace::Deals { accept_allowed: offer_pending },
    }
}

/// Stage payoff matrix `u(a_self, a_opp)` over the signal grids of `player`
/// and its opponent. Used by the behavioral signals.
pub fn stage_payoff_matrix<T: Scalar>(
    spec: &GameSpec,
    player: Player,
) -> Option<(Vec<Action>, Vec<Action>, Vec<Vec<T>>)> {
    let own = legal_actions(spec, player, false).grid();
    let opp = legal_actions(spec, player.other(), false).grid();
    let rows = match spec {
        GameSpec::Rps(_) => own
            .iter()
            .map(|a| {
                opp.iter()
                    .map(|b| match (a, b) {
                        (Action::Rps(x), Action::Rps(y)) => rps_payoff::<T>(*x, *y).u_self,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect(),
        GameSpec::Bertrand(p) => {
            let pt = BertrandParams::<T> {
                product: String::new(),
                cost: T::lit(p.cost),
                demand_slope: T::lit(p.demand_slope),
                p_max: T::lit(p.p_max),
                rounds: p.rounds,
                max_interactions: p.max_interactions,
            };
            own.iter()
                .map(|a| {
                    opp.iter()
                        .map(|b| match (a, b) {
                            (Action::Price(x), Action::Price(y)) => {
                                bertrand_round_payoff(*x, *y, &pt).u_self
                            }
                            _ => unreachable!(),
                        })
                        .collect()
                })
                .collect()
        }
        GameSpec::Bargaining(_) => return None,
    };
    Some((own, opp, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constrained_rps_forbids_paper_for_that_player_only() {
        let spec = GameSpec::rps_constrained(Player::Two);
        assert_eq!(
            legal_actions(&spec, Player::Two, false),
            ActionSpace::Rps(vec![MoveRps::Rock, MoveRps::Scissors])
        );
        assert_eq!(legal_actions(&spec, Player::One, false), ActionSpace::Rps(MoveRps::ALL.to_vec()));
        let free = GameSpec::rps();
        assert_eq!(legal_actions(&free, Player::Two, false).grid().len(), 3);
    }

    #[test]
    fn first_bargaining_turn_cannot_accept() {
        let spec = GameSpec::bargaining_fixture();
        let space = legal_actions(&spec, Player::One, false);
        assert!(!space.contains(&Action::Deal(DealMove::Accept)));
        let offer = Action::Deal(DealMove::Propose { units: 3, price: Cents(4500) });
        assert!(space.contains(&offer));
        assert!(legal_actions(&spec, Player::Two, true).contains(&Action::Deal(DealMove::Accept)));
        let zero_units = Action::Deal(DealMove::Propose { units: 0, price: Cents(4500) });
        assert!(!space.contains(&zero_units));
    }

    #[test]
    fn bertrand_grid_spans_zero_to_p_max() {
        let spec = GameSpec::bertrand_fixture();
        let grid = legal_actions(&spec, Player::One, false).grid();
        assert_eq!(grid.len(), 301);
        assert_eq!(grid[0], Action::Price(0));
        assert_eq!(grid[300], Action::Price(300));
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        let mut spec = GameSpec::bertrand_fixture();
        if let GameSpec::Bertrand(p) = &mut spec {
            p.p_max = 60.0;
        }
        assert!(spec.validate().is_err());
        let mut spec = GameSpec::bargaining_fixture();
        if let GameSpec::Bargaining(p) = &mut spec {
            p.value = 40.0;
        }
        assert!(spec.validate().is_err());
        assert!(GameSpec::rps().validate().is_ok());
    }

    #[test]
    fn player_serializes_as_seat_number() {
        assert_eq!(serde_json::to_string(&Player::Two).unwrap(), "2");
        let p: Player = serde_json::from_str("1").unwrap();
        assert_eq!(p, Player::One);
        assert!(serde_json::from_str::<Player>("3").is_err());
    }

    #[test]
    fn rps_stage_matrix_is_payoff_table() {
        let (own, opp, m) = stage_payoff_matrix::<f64>(&GameSpec::rps(), Player::Two).unwrap();
        assert_eq!(own.len(), 3);
        assert_eq!(opp.len(), 3);
        // paper vs rock
        assert_eq!(m[1][0], 2.0);
        assert_eq!(m[0][0], 1.0);
        assert_eq!(GameSpec::rps().payoff_range(), 2.0);
    }
}
