//! Game-instance datasets: a seeded generator and CSV loaders.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BargainingParams, BertrandParams, GameError, GameSpec, DEFAULT_MAX_INTERACTIONS};

const PRODUCTS: &[&str] = &[
    "Luxury Face Creams",
    "Waterproof Hiking Boots",
    "Organic Coffee Beans",
    "Wireless Earbuds",
    "Handmade Ceramic Mugs",
    "Electric Scooters",
    "Yoga Mats",
    "Artisan Chocolate Bars",
    "Smart Thermostats",
    "Leather Wallets",
    "Gaming Keyboards",
    "Stainless Steel Water Bottles",
    "Scented Candles",
    "Running Shoes",
    "Bluetooth Speakers",
    "Cast Iron Skillets",
];

const SLOPES: [f64; 5] = [0.1, 0.2, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertrandRow {
    pub product: String,
    pub cost: f64,
    pub p_max: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargainingRow {
    pub product: String,
    pub cost: f64,
    pub value: f64,
}

impl BertrandRow {
    pub fn to_spec(&self, rounds: u32) -> GameSpec {
        GameSpec::Bertrand(BertrandParams {
            product: self.product.clone(),
            cost: self.cost,
            demand_slope: self.d,
            p_max: self.p_max,
            rounds,
            max_interactions: rounds.max(DEFAULT_MAX_INTERACTIONS),
        })
    }
}

impl BargainingRow {
    pub fn to_spec(&self, max_interactions: u32) -> GameSpec {
        GameSpec::Bargaining(BargainingParams {
            product: self.product.clone(),
            cost: self.cost,
            value: self.value,
            max_interactions,
        })
    }
}

/// Integer cost in `[5, 200]`, integer `p_max` in `[2c + 10, 10c]` and a
/// demand slope drawn from `{0.1, 0.2, 0.5, 1, 2}`.
pub fn generate_bertrand_instances(n: usize, seed: u64) -> Vec<BertrandRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let cost = rng.gen_range(5u32..=200);
            let p_max = rng.gen_range(2 * cost + 10..=10 * cost);
            BertrandRow {
                product: PRODUCTS.choose(&mut rng).unwrap().to_string(),
                cost: cost as f64,
                p_max: p_max as f64,
                d: *SLOPES.choose(&mut rng).unwrap(),
            }
        })
        .collect()
}

/// Bargaining instances reuse the Bertrand generator with `value := p_max`.
pub fn generate_bargaining_instances(n: usize, seed: u64) -> Vec<BargainingRow> {
    generate_bertrand_instances(n, seed)
        .into_iter()
        .map(|r| BargainingRow { product: r.product, cost: r.cost, value: r.p_max })
        .collect()
}

fn load_csv<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>, GameError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(|e| GameError::Instances(e.to_string()))).collect()
}

/// Reads `product,cost,p_max,d` rows and validates each instance.
pub fn load_bertrand_csv<R: Read>(reader: R) -> Result<Vec<BertrandRow>, GameError> {
    let rows: Vec<BertrandRow> = load_csv(reader)?;
    for (i, r) in rows.iter().enumerate() {
        r.to_spec(1)
            .validate()
            .map_err(|e| GameError::Instances(format!("row {}: {e}", i + 1)))?;
    }
    Ok(rows)
}

/// Reads `product,cost,value` rows and validates each instance.
pub fn load_bargaining_csv<R: Read>(reader: R) -> Result<Vec<BargainingRow>, GameError> {
    let rows: Vec<BargainingRow> = load_csv(reader)?;
    for (i, r) in rows.iter().enumerate() {
        r.to_spec(1)
            .validate()
            .map_err(|e| GameError::Instances(format!("row {}: {e}", i + 1)))?;
    }
    Ok(rows)
}
