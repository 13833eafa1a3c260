use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoveRps {
    Rock,
    Paper,
    Scissors,
}

impl MoveRps {
    pub const ALL: [MoveRps; 3] = [MoveRps::Rock, MoveRps::Paper, MoveRps::Scissors];

    /// The move this one defeats.
    pub fn beats(self) -> MoveRps {
        match self {
            MoveRps::Rock => MoveRps::Scissors,
            MoveRps::Paper => MoveRps::Rock,
            MoveRps::Scissors => MoveRps::Paper,
        }
    }

    /// The move that defeats this one.
    pub fn beaten_by(self) -> MoveRps {
        match self {
            MoveRps::Rock => MoveRps::Paper,
            MoveRps::Paper => MoveRps::Scissors,
            MoveRps::Scissors => MoveRps::Rock,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MoveRps::Rock => "rock",
            MoveRps::Paper => "paper",
            MoveRps::Scissors => "scissors",
        }
    }
}

/// Non-negative amount of money with two decimals, stored as integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Cents(pub i64);

impl Cents {
    /// Rounds half-up to the nearest cent.
    pub fn from_dollars(x: f64) -> Cents {
        Cents((x * 100.0 + 0.5 + 1e-9).floor() as i64)
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Parses a decimal literal such as `8.33`, `30` or `8.335` (rounded
    /// half-up on the third decimal). Works on the digits, not on a float.
    pub fn parse(s: &str) -> Option<Cents> {
        let s = s.trim();
        let (int_part, frac_part) = match s.split_once('.') {
            Some((a, b)) => (a, b),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return None;
        }
        let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
        let digits: Vec<i64> = frac_part.bytes().map(|b| (b - b'0') as i64).collect();
        let d = |i: usize| digits.get(i).copied().unwrap_or(0);
        let mut cents = whole.checked_mul(100)? + d(0) * 10 + d(1);
        if d(2) >= 5 {
            cents += 1;
        }
        Some(Cents(cents))
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 100 == 0 {
            write!(f, "{}", self.0 / 100)
        } else {
            write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DealMove {
    /// Accept the opponent's most recent proposal.
    Accept,
    Propose { units: u32, price: Cents },
}

/// A game action of any of the three games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Rps(MoveRps),
    /// Integer price in dollars.
    Price(u32),
    Deal(DealMove),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse action from `{0}`")]
pub struct ActionParseError(pub String);

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Rps(m) => f.write_str(m.as_str()),
            Action::Price(p) => write!(f, "${p}"),
            Action::Deal(DealMove::Accept) => f.write_str("accept"),
            Action::Deal(DealMove::Propose { units, price }) => {
                write!(f, "{units} units at ${price} each")
            }
        }
    }
}

pub(crate) fn parse_rps(text: &str) -> Option<MoveRps> {
    let t = text.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '!');
    match t.to_ascii_lowercase().as_str() {
        "rock" => Some(MoveRps::Rock),
        "paper" => Some(MoveRps::Paper),
        "scissors" | "scissor" => Some(MoveRps::Scissors),
        _ => None,
    }
}

/// `$150`, `150`, `$ 150`. Decimal prices are rejected since prices must be integers.
pub(crate) fn parse_price(text: &str) -> Option<u32> {
    let t = text.trim().trim_start_matches('$').trim();
    if t.is_empty() || !t.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    t.parse().ok()
}

/// `accept` or `u units at $p each` (also tolerates `unit`, a missing `$`
/// and a trailing period).
pub(crate) fn parse_deal(text: &str) -> Option<DealMove> {
    let t = text.trim().trim_end_matches('.').trim().to_ascii_lowercase();
    if t == "accept" {
        return Some(DealMove::Accept);
    }
    let mut words = t.split_whitespace();
    let units: u32 = words.next()?.parse().ok()?;
    let unit_word = words.next()?;
    if unit_word != "units" && unit_word != "unit" {
        return None;
    }
    if words.next()? != "at" {
        return None;
    }
    let price_word = words.next()?;
    let price = Cents::parse(price_word.trim_start_matches('$'))?;
    if words.next()? != "each" || words.next().is_some() {
        return None;
    }
    Some(DealMove::Propose { units, price })
}

impl FromStr for Action {
    type Err = ActionParseError;

    /// Parses the canonical text form written to episode logs. The three
    /// games use disjoint forms, so no game context is needed.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(m) = parse_rps(s) {
            return Ok(Action::Rps(m));
        }
        if let Some(d) = parse_deal(s) {
            return Ok(Action::Deal(d));
        }
        if let Some(p) = parse_price(s) {
            return Ok(Action::Price(p));
        }
        Err(ActionParseError(s.to_string()))
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_relations() {
        assert_eq!(MoveRps::Rock.beats(), MoveRps::Scissors);
        assert_eq!(MoveRps::Scissors.beats(), MoveRps::Paper);
        assert_eq!(MoveRps::Paper.beats(), MoveRps::Rock);
        for m in MoveRps::ALL {
            assert_eq!(m.beaten_by().beats(), m);
        }
    }

    #[test]
    fn cents_round_half_up() {
        assert_eq!(Cents::parse("8.33"), Some(Cents(833)));
        assert_eq!(Cents::parse("8.335"), Some(Cents(834)));
        assert_eq!(Cents::parse("8.3349"), Some(Cents(833)));
        assert_eq!(Cents::parse("30"), Some(Cents(3000)));
        assert_eq!(Cents::parse(".5"), Some(Cents(50)));
        assert_eq!(Cents::parse("abc"), None);
        assert_eq!(Cents::parse(""), None);
        assert_eq!(Cents::from_dollars(71.0417), Cents(7104));
        assert_eq!(Cents(833).to_string(), "8.33");
        assert_eq!(Cents(3000).to_string(), "30");
        assert_eq!(Cents(830).to_string(), "8.30");
    }

    #[test]
    fn canonical_forms_parse_back() {
        let cases = [
            Action::Rps(MoveRps::Scissors),
            Action::Price(150),
            Action::Deal(DealMove::Accept),
            Action::Deal(DealMove::Propose { units: 15, price: Cents(833) }),
            Action::Deal(DealMove::Propose { units: 10, price: Cents(3000) }),
        ];
        for a in cases {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert_eq!(Action::Price(150).to_string(), "$150");
        assert_eq!(
            Action::Deal(DealMove::Propose { units: 15, price: Cents(833) }).to_string(),
            "15 units at $8.33 each"
        );
    }

    #[test]
    fn lenient_forms() {
        assert_eq!(parse_rps(" Rock "), Some(MoveRps::Rock));
        assert_eq!(parse_rps("\"paper\""), Some(MoveRps::Paper));
        assert_eq!(parse_rps("lizard"), None);
        assert_eq!(parse_price("150"), Some(150));
        assert_eq!(parse_price("$ 150"), Some(150));
        assert_eq!(parse_price("$150.5"), None);
        assert_eq!(parse_deal("1 unit at 40 each."), Some(DealMove::Propose { units: 1, price: Cents(4000) }));
        assert_eq!(parse_deal("Accept"), Some(DealMove::Accept));
        assert_eq!(parse_deal("10 units for $30"), None);
    }
}
