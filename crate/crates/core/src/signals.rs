//! Behavioral signals and evaluation metrics.
//!
//! ISE measures how well the agent's belief matches the opponent's true next
//! action distribution, SRP how good the agent's own distribution is against
//! its belief, and LO the best expected utility available against the true
//! distribution. Together they bound the agent's true expected utility:
//!
//! `SRP (Umax - Umin) + Umin - C sqrt(-ISE / 2) <= E_true <= LO`
//!
//! where `C` is the payoff range. The lower side follows from Pinsker's
//! inequality, the upper side from taking a maximum over pure actions.

use serde::Serialize;
use thiserror::Error;

use crate::dialogue::{ElicitationRecord, Episode};
use crate::distribution::Distribution;
use crate::game::{bertrand_monopoly, bargaining_utilities, stage_payoff_matrix, GameKind, GameSpec, Player};
use crate::scalar::Scalar;

/// Additive smoothing applied to both arguments of the KL divergence.
pub const KL_SMOOTHING: f64 = 1e-9;
/// Below this spread of action values SRP is reported as 0.5.
pub const SRP_DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("distributions are over different supports")]
    SupportMismatch,
    #[error("signals are not defined for {0}")]
    UnsupportedGame(GameKind),
    #[error("no elicited distributions in episode {0}")]
    MissingDistributions(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn smooth<T: Scalar>(p: &[T]) -> Vec<T> {
    let eps = T::lit(KL_SMOOTHING);
    let total: T = p.iter().map(|x| *x + eps).sum();
    p.iter().map(|x| (*x + eps) / total).collect()
}

/// `sum p ln(p / q)` after smoothing and renormalizing both vectors.
pub fn kl<T: Scalar>(p: &[T], q: &[T]) -> Result<T, SignalError> {
    if p.len() != q.len() {
        return Err(SignalError::SupportMismatch);
    }
    let (p, q) = (smooth(p), smooth(q));
    Ok(p.iter().zip(&q).map(|(a, b)| *a * (*a / *b).ln()).sum())
}

pub fn kl_divergence<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T, SignalError> {
    if p.support != q.support {
        return Err(SignalError::SupportMismatch);
    }
    kl(&p.probs, &q.probs)
}

/// Distributions and stage payoffs at one decision point. `payoff[a][b]` is
/// the agent's utility for own action `a` against opponent action `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalState<T = f64> {
    pub pi_true: Vec<T>,
    pub pi_belief: Vec<T>,
    pub pi_self: Vec<T>,
    pub payoff: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalReport<T = f64> {
    pub ise: T,
    pub srp: T,
    pub lo: T,
    pub bound_lower: T,
    pub bound_upper: T,
    pub e_true: T,
    pub violation: bool,
}

impl<T: Scalar> SignalState<T> {
    pub fn check(&self) -> Result<(), SignalError> {
        let rows = self.payoff.len();
        let cols = self.payoff.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || self.payoff.iter().any(|r| r.len() != cols) {
            return Err(SignalError::Shape("payoff matrix must be rectangular and non-empty".into()));
        }
        if self.pi_self.len() != rows || self.pi_true.len() != cols || self.pi_belief.len() != cols {
            return Err(SignalError::Shape(format!(
                "payoff is {rows}x{cols}, self {}, true {}, belief {}",
                self.pi_self.len(),
                self.pi_true.len(),
                self.pi_belief.len()
            )));
        }
        Ok(())
    }

    /// Expected utility of each own pure action against `opp`.
    fn action_values(&self, opp: &[T]) -> Vec<T> {
        self.payoff.iter().map(|row| row.iter().zip(opp).map(|(u, q)| *u * *q).sum()).collect()
    }

    fn expected(&self, opp: &[T]) -> T {
        self.action_values(opp).iter().zip(&self.pi_self).map(|(v, p)| *v * *p).sum()
    }

    /// Largest minus smallest stage payoff.
    pub fn payoff_range(&self) -> T {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for u in self.payoff.iter().flatten() {
            lo = lo.min(*u);
            hi = hi.max(*u);
        }
        hi - lo
    }

    pub fn ise(&self) -> Result<T, SignalError> {
        Ok(-kl(&self.pi_true, &self.pi_belief)?)
    }

    /// Own expected utility against the belief, scaled between the worst and
    /// best pure actions against that belief.
    pub fn srp(&self) -> T {
        let values = self.action_values(&self.pi_belief);
        let (u_min, u_max) = min_max(&values);
        if u_max - u_min < T::lit(SRP_DEGENERATE) {
            return T::lit(0.5);
        }
        (self.expected(&self.pi_belief) - u_min) / (u_max - u_min)
    }

    pub fn lo(&self) -> T {
        min_max(&self.action_values(&self.pi_true)).1
    }

    pub fn e_true(&self) -> T {
        self.expected(&self.pi_true)
    }

    /// Both bounds and the true expected utility; `violation` is set when
    /// `e_true` leaves `[lower - tol, upper + tol]`.
    pub fn theorem_bounds(&self, tol: T) -> Result<SignalReport<T>, SignalError> {
        self.check()?;
        let ise = self.ise()?;
        let srp = self.srp();
        let lo = self.lo();
        let values = self.action_values(&self.pi_belief);
        let (u_min, u_max) = min_max(&values);
        let c = self.payoff_range();
        let pinsker = c * (-ise / T::lit(2.0)).max(T::zero()).sqrt();
        let bound_lower = srp * (u_max - u_min) + u_min - pinsker;
        let e_true = self.e_true();
        let violation = e_true < bound_lower - tol || e_true > lo + tol;
        Ok(SignalReport { ise, srp, lo, bound_lower, bound_upper: lo, e_true, violation })
    }
}

fn min_max<T: Scalar>(xs: &[T]) -> (T, T) {
    xs.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Builds the signal state of one logged elicitation.
pub fn state_from_record(spec: &GameSpec, record: &ElicitationRecord) -> Result<SignalState<f64>, SignalError> {
    let (own, opp, payoff) =
        stage_payoff_matrix::<f64>(spec, record.player).ok_or(SignalError::UnsupportedGame(spec.kind()))?;
    if record.pi_self.support != own || record.pi_true.support != opp || record.pi_belief.support != opp {
        return Err(SignalError::SupportMismatch);
    }
    Ok(SignalState {
        pi_true: record.pi_true.probs.clone(),
        pi_belief: record.pi_belief.probs.clone(),
        pi_self: record.pi_self.probs.clone(),
        payoff,
    })
}

/// Signal reports before each logged game action of `player`, in turn order.
pub fn signal_schedule(episode: &Episode, player: Player) -> Result<Vec<(usize, SignalReport)>, SignalError> {
    if episode.spec.kind() == GameKind::Bargaining {
        return Err(SignalError::UnsupportedGame(GameKind::Bargaining));
    }
    let records: Vec<_> = episode.elicitations.iter().filter(|r| r.player == player).collect();
    if records.is_empty() {
        return Err(SignalError::MissingDistributions(episode.episode_id.clone()));
    }
    records
        .into_iter()
        .map(|r| Ok((r.turn, state_from_record(&episode.spec, r)?.theorem_bounds(BOUND_TOLERANCE)?)))
        .collect()
}

/// `(u_self - u_opp) / (|u_self| + |u_opp|)`, zero when both are zero.
pub fn relative_advantage(u_self: f64, u_opp: f64) -> f64 {
    let denom = u_self.abs() + u_opp.abs();
    if denom == 0.0 {
        0.0
    } else {
        (u_self - u_opp) / denom
    }
}

/// Mean relative advantage of `player` over a batch. Empty batches give 0.
pub fn nra(episodes: &[Episode], player: Player) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    episodes
        .iter()
        .map(|e| {
            let (a, b) = e.utilities_for(player);
            relative_advantage(a, b)
        })
        .sum::<f64>()
        / episodes.len() as f64
}

/// Own total Bertrand profit over the monopoly profit of all rounds.
pub fn normalized_earnings(episode: &Episode, player: Player) -> Option<f64> {
    let GameSpec::Bertrand(p) = &episode.spec else { return None };
    let (_, total) = bertrand_monopoly(p);
    Some(episode.utilities_for(player).0 / (p.rounds as f64 * total))
}

/// Win, draw and lose rates of `player` over RPS episodes.
pub fn win_draw_lose(episodes: &[Episode], player: Player) -> (f64, f64, f64) {
    let mut counts = [0usize; 3];
    for e in episodes {
        let (u, _) = e.utilities_for(player);
        let slot = if u > 1.5 {
            0
        } else if u > 0.5 {
            1
        } else {
            2
        };
        counts[slot] += 1;
    }
    let n = episodes.len().max(1) as f64;
    (counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n)
}

/// Step of the `alpha` grid used by [`bargaining_power`].
pub const POWER_GRID: usize = 100;

/// Exponent `alpha` of the generalized Nash bargaining solution
/// `argmax u_agent^alpha u_opp^(1 - alpha)` whose deal lies closest to the
/// agreed one in utility space. Player-1 sells, Player-2 buys.
pub fn bargaining_power(deal: Option<(u32, f64)>, spec: &GameSpec, agent: Player) -> Option<f64> {
    let GameSpec::Bargaining(p) = spec else { return None };
    let split = |seller: f64, buyer: f64| if agent == Player::One { (seller, buyer) } else { (buyer, seller) };
    let observed = match deal {
        None => return Some(0.0),
        Some(d) => {
            let u = bargaining_utilities(Some(d), p);
            split(u.u_self, u.u_other)
        }
    };
    if observed.0 <= 0.0 {
        return Some(0.0);
    }
    if observed.1 <= 0.0 {
        return Some(1.0);
    }
    let frontier = bargaining_frontier(spec, agent);
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=POWER_GRID {
        let alpha = k as f64 / POWER_GRID as f64;
        let arg = frontier
            .iter()
            .copied()
            .max_by(|a, b| {
                let fa = alpha * a.0.ln() + (1.0 - alpha) * a.1.ln();
                let fb = alpha * b.0.ln() + (1.0 - alpha) * b.1.ln();
                fa.total_cmp(&fb)
            })
            .expect("non-empty frontier");
        let d = (arg.0 - observed.0).hypot(arg.1 - observed.1);
        if d < best.0 {
            best = (d, alpha);
        }
    }
    Some(best.1)
}

/// Pareto frontier of strictly positive (agent, opponent) utility pairs over
/// deals with `1..=3 floor(v/c)` units at prices from cost to value in cents.
pub fn bargaining_frontier(spec: &GameSpec, agent: Player) -> Vec<(f64, f64)> {
    let GameSpec::Bargaining(p) = spec else { return Vec::new() };
    let max_units = (3.0 * (p.value / p.cost).floor()).max(1.0) as u32;
    let lo = (p.cost * 100.0).round() as i64;
    let hi = (p.value * 100.0).round() as i64;
    let mut points = Vec::new();
    for n in 1..=max_units {
        for cents in lo..=hi {
            let u = bargaining_utilities(Some((n, cents as f64 / 100.0)), p);
            let (a, b) = if agent == Player::One { (u.u_self, u.u_other) } else { (u.u_other, u.u_self) };
            if a > 0.0 && b > 0.0 {
                points.push((a, b));
            }
        }
    }
    points.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));
    let mut frontier = Vec::new();
    let mut best_opp = f64::NEG_INFINITY;
    for pt in points {
        if pt.1 > best_opp {
            best_opp = pt.1;
            frontier.push(pt);
        }
    }
    frontier
}
