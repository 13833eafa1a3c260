use serde::{Deserialize, Serialize};

use super::{BargainingParams, BertrandParams, GameError, MoveRps};
use crate::scalar::Scalar;

/// Utilities of one outcome, seen from one player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityPair<T = f64> {
    pub u_self: T,
    pub u_other: T,
}

impl<T: Scalar> UtilityPair<T> {
    pub fn new(u_self: T, u_other: T) -> Self {
        Self { u_self, u_other }
    }

    pub fn swapped(self) -> Self {
        Self { u_self: self.u_other, u_other: self.u_self }
    }
}

/// 2 for a win, 1 for a tie, 0 for a loss.
pub fn rps_payoff<T: Scalar>(a: MoveRps, b: MoveRps) -> UtilityPair<T> {
    let two = T::lit(2.0);
    if a == b {
        UtilityPair::new(T::one(), T::one())
    } else if a.beats() == b {
        UtilityPair::new(two, T::zero())
    } else {
        UtilityPair::new(T::zero(), two)
    }
}

/// Market demand `max(0, (p_max - p) / d)`.
pub fn bertrand_demand<T: Scalar>(price: T, params: &BertrandParams<T>) -> T {
    ((params.p_max - price) / params.demand_slope).max(T::zero())
}

/// Profits of one Bertrand round. The strictly cheaper firm serves the whole
/// market; equal prices split it in half. Pricing below cost loses money.
pub fn bertrand_round_payoff<T: Scalar>(
    price_self: u32,
    price_other: u32,
    params: &BertrandParams<T>,
) -> UtilityPair<T> {
    let low = price_self.min(price_other);
    let p = T::from_u32(low).expect("u32 price");
    let market = (p - params.cost) * bertrand_demand(p, params);
    match price_self.cmp(&price_other) {
        std::cmp::Ordering::Less => UtilityPair::new(market, T::zero()),
        std::cmp::Ordering::Greater => UtilityPair::new(T::zero(), market),
        std::cmp::Ordering::Equal => {
            let half = market / T::lit(2.0);
            UtilityPair::new(half, half)
        }
    }
}

/// Monopoly price `(c + p_max) / 2` and the total market profit at that
/// price, `(p_max - c)^2 / (4 d)`. Colluding firms each get half.
pub fn bertrand_monopoly<T: Scalar>(params: &BertrandParams<T>) -> (T, T) {
    let two = T::lit(2.0);
    let price = (params.cost + params.p_max) / two;
    let margin = params.p_max - params.cost;
    (price, margin * margin / (T::lit(4.0) * params.demand_slope))
}

/// `H(n) = 1 + 1/2 + ... + 1/n`, summed from the largest term down.
pub fn harmonic<T: Scalar>(n: u32) -> T {
    (1..=n).map(|k| T::one() / T::from_u32(k).expect("u32")).sum()
}

/// `(seller, buyer)` utilities of an agreed deal of `units` at `price` each:
/// seller `(p - c) n`, buyer `v H(n) - p n`. No deal yields `(0, 0)`.
pub fn bargaining_utilities<T: Scalar>(
    deal: Option<(u32, T)>,
    params: &BargainingParams<T>,
) -> UtilityPair<T> {
    match deal {
        None => UtilityPair::new(T::zero(), T::zero()),
        Some((units, price)) => {
            let n = T::from_u32(units).expect("u32");
            UtilityPair::new(
                (price - params.cost) * n,
                params.value * harmonic::<T>(units) - price * n,
            )
        }
    }
}

/// Symmetric Nash bargaining deal: `n = floor(v / c)` units at
/// `(v H(n) / n + c) / 2` each.
pub fn bargaining_nash_solution<T: Scalar>(
    params: &BargainingParams<T>,
) -> Result<(u32, T), GameError> {
    if !(params.value > params.cost) || !(params.cost > T::zero()) {
        return Err(GameError::NoSurplus {
            value: params.value.to_f64_lossy(),
            cost: params.cost.to_f64_lossy(),
        });
    }
    let units = (params.value / params.cost).floor().to_u32().unwrap_or(u32::MAX);
    let n = T::from_u32(units).expect("u32");
    let price = (params.value * harmonic::<T>(units) / n + params.cost) / T::lit(2.0);
    Ok((units, price))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::MoveRps::*;

    fn fixture() -> BertrandParams<f64> {
        BertrandParams {
            product: "Luxury Face Creams".into(),
            cost: 70.0,
            demand_slope: 0.2,
            p_max: 300.0,
            rounds: 5,
            max_interactions: 5,
        }
    }

    fn boots() -> BargainingParams<f64> {
        BargainingParams { product: "Boots".into(), cost: 40.0, value: 250.0, max_interactions: 5 }
    }

    #[test]
    fn rps_table_from_beat_relations() {
        // rock>scissors, scissors>paper, paper>rock
        let wins = [(Rock, Scissors), (Scissors, Paper), (Paper, Rock)];
        for a in MoveRps::ALL {
            for b in MoveRps::ALL {
                let u = rps_payoff::<f64>(a, b);
                let expected = if a == b {
                    (1.0, 1.0)
                } else if wins.contains(&(a, b)) {
                    (2.0, 0.0)
                } else {
                    (0.0, 2.0)
                };
                assert_eq!((u.u_self, u.u_other), expected, "{a:?} vs {b:?}");
                assert_eq!(u.u_self + u.u_other, 2.0);
                assert_eq!(rps_payoff::<f64>(b, a), u.swapped());
            }
        }
    }

    #[test]
    fn demand_examples() {
        let p = fixture();
        assert!((bertrand_demand(110.0, &p) - 950.0).abs() < 1e-9);
        assert!((bertrand_demand(150.0, &p) - 750.0).abs() < 1e-9);
        assert_eq!(bertrand_demand(300.0, &p), 0.0);
        assert_eq!(bertrand_demand(400.0, &p), 0.0);
    }

    #[test]
    fn round_payoff_examples() {
        let p = fixture();
        let tie = bertrand_round_payoff(150, 150, &p);
        assert!((tie.u_self - 30000.0).abs() < 1e-6 && (tie.u_other - 30000.0).abs() < 1e-6);
        let u = bertrand_round_payoff(110, 135, &p);
        assert!((u.u_self - 38000.0).abs() < 1e-6);
        assert_eq!(u.u_other, 0.0);
        let at_cost = bertrand_round_payoff(70, 80, &p);
        assert_eq!((at_cost.u_self, at_cost.u_other), (0.0, 0.0));
        let below = bertrand_round_payoff(60, 80, &p);
        assert!(below.u_self < 0.0);
    }

    #[test]
    fn monopoly_examples() {
        let p = fixture();
        let (price, total) = bertrand_monopoly(&p);
        assert_eq!(price, 185.0);
        assert!((total - 66125.0).abs() < 1e-9);
        assert!((total / 2.0 - 33062.5).abs() < 1e-9);
        let mut q = fixture();
        q.cost = q.p_max - 2.0;
        q.demand_slope = 1.0;
        let (price, total) = bertrand_monopoly(&q);
        assert_eq!(price, q.p_max - 1.0);
        assert!((total - 1.0).abs() < 1e-12);
        let profit = |x: f64| (x - p.cost) * bertrand_demand(x, &p);
        for delta in [0.5, 1.0, 10.0] {
            assert!(profit(185.0 + delta) < profit(185.0));
            assert!(profit(185.0 - delta) < profit(185.0));
        }
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic::<f64>(1), 1.0);
        assert!((harmonic::<f64>(6) - 49.0 / 20.0).abs() < 1e-15);
        assert!((harmonic::<f64>(10) - 2.9289682539682538).abs() < 1e-15);
        assert!((harmonic::<f32>(6) - 2.45).abs() < 1e-6);
    }

    #[test]
    fn bargaining_examples() {
        let b = boots();
        let u = bargaining_utilities(Some((10, 30.0)), &b);
        assert!((u.u_self + 100.0).abs() < 1e-12);
        assert!((u.u_other - 432.24206349206).abs() < 1e-6);
        assert_eq!(bargaining_utilities(None, &b), UtilityPair::new(0.0, 0.0));
        let one = bargaining_utilities(Some((1, 40.0)), &b);
        assert_eq!((one.u_self, one.u_other), (0.0, 210.0));
        // k-th unit is worth v/k to the buyer
        for k in 2..12u32 {
            let du = bargaining_utilities(Some((k, 30.0)), &b).u_other
                - bargaining_utilities(Some((k - 1, 30.0)), &b).u_other;
            assert!((du - (250.0 / k as f64 - 30.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn nash_solution_examples() {
        let (n, p) = bargaining_nash_solution(&boots()).unwrap();
        assert_eq!(n, 6);
        assert!((p - 71.0417).abs() < 1e-4);
        let mut b = boots();
        b.value = 80.0;
        let (n, p) = bargaining_nash_solution(&b).unwrap();
        assert_eq!(n, 2);
        assert!((p - (80.0 * 1.5 / 2.0 + 40.0) / 2.0).abs() < 1e-12);
        b.value = 79.9;
        let (n, p) = bargaining_nash_solution(&b).unwrap();
        assert_eq!(n, 1);
        assert!((p - (79.9 + 40.0) / 2.0).abs() < 1e-12);
        b.value = 40.0;
        assert!(matches!(bargaining_nash_solution(&b), Err(GameError::NoSurplus { .. })));
    }
}
