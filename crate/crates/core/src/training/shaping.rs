use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainError;
use crate::agents::{remote_chat, RemoteConfig, RemoteError};
use crate::dialogue::prompts::render_naturalness_prompt;
use crate::dialogue::{Message, Role};
use crate::signals::SignalReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardShapingConfig {
    pub lo_weight: f64,
    pub ise_weight: f64,
    pub naturalness_weight: f64,
    pub naturalness_threshold: f64,
}

impl Default for RewardShapingConfig {
    fn default() -> Self {
        Self { lo_weight: 10.0, ise_weight: 0.0, naturalness_weight: 0.1, naturalness_threshold: 0.7 }
    }
}

impl RewardShapingConfig {
    /// Raw game utility only.
    pub fn none() -> Self {
        Self { lo_weight: 0.0, ise_weight: 0.0, naturalness_weight: 0.0, ..Self::default() }
    }

    pub fn needs_signals(&self) -> bool {
        self.lo_weight != 0.0 || self.ise_weight != 0.0
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let w = [self.lo_weight, self.ise_weight, self.naturalness_weight];
        if w.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::Config("shaping weights must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.naturalness_threshold) {
            return Err(TrainError::Config("naturalness threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Shaped reward and the parts it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapedReward {
    pub total: f64,
    pub utility: f64,
    pub lo: Option<f64>,
    pub ise: Option<f64>,
    pub natural_fraction: Option<f64>,
    pub natural_bonus: f64,
}

/// `u + w_lo LO + w_ise ISE + w_nat 1[fraction >= threshold]`. `signals` is
/// the report before the trained player's final game action. A missing
/// naturalness fraction earns no bonus.
pub fn shaped_reward(
    utility: f64,
    signals: Option<&SignalReport>,
    natural_fraction: Option<f64>,
    cfg: &RewardShapingConfig,
) -> Result<ShapedReward, TrainError> {
    if cfg.needs_signals() && signals.is_none() {
        return Err(TrainError::MissingSignals);
    }
    let lo = signals.map(|s| s.lo);
    let ise = signals.map(|s| s.ise);
    let natural = natural_fraction.is_some_and(|f| f >= cfg.naturalness_threshold);
    let natural_bonus = if natural { cfg.naturalness_weight } else { 0.0 };
    let total = utility
        + if cfg.lo_weight != 0.0 { cfg.lo_weight * lo.unwrap_or(0.0) } else { 0.0 }
        + if cfg.ise_weight != 0.0 { cfg.ise_weight * ise.unwrap_or(0.0) } else { 0.0 }
        + natural_bonus;
    Ok(ShapedReward { total, utility, lo, ise, natural_fraction, natural_bonus })
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(#[from] RemoteError),
}

/// Rates talk texts as natural or not.
pub trait NaturalnessJudge: Send + Sync {
    fn judge(&self, texts: &[String]) -> Result<Vec<bool>, JudgeError>;
}

/// Verdicts in order of appearance. A response without a readable verdict
/// counts as "No".
pub fn parse_verdicts(reply: &str, n: usize) -> Vec<bool> {
    let mut verdicts: Vec<bool> = reply
        .lines()
        .filter_map(|line| {
            let lower = line.to_lowercase();
            let rest = lower.split_once("naturalness score:").map(|(_, r)| r).unwrap_or(&lower);
            let word = rest.trim().trim_start_matches(['*', '"', '\'']).split(|c: char| !c.is_alphabetic()).next()?;
            match word {
                "yes" => Some(true),
                "no" => Some(false),
                _ if lower.contains("naturalness score") => Some(false),
                _ => None,
            }
        })
        .collect();
    verdicts.resize(n, false);
    verdicts
}

/// Yes-fraction over `texts`. An empty list scores 0.
pub fn naturalness_fraction(texts: &[String], judge: &dyn NaturalnessJudge) -> Result<f64, JudgeError> {
    if texts.is_empty() {
        return Ok(0.0);
    }
    let v = judge.judge(texts)?;
    Ok(v.iter().filter(|x| **x).count() as f64 / texts.len() as f64)
}

/// Chat-model judge behind an OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    pub config: RemoteConfig,
}

impl NaturalnessJudge for RemoteJudge {
    fn judge(&self, texts: &[String]) -> Result<Vec<bool>, JudgeError> {
        let prompt = render_naturalness_prompt(texts);
        let (reply, _) = remote_chat(&self.config, &[Message { role: Role::User, content: prompt }])?;
        Ok(parse_verdicts(&reply, texts.len()))
    }
}

/// Offline stand-in for the chat judge: a reply is natural when it has at
/// least four words, ends like a sentence and does not repeat one word.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicJudge;

impl HeuristicJudge {
    pub fn is_natural(text: &str) -> bool {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.len() < 4 {
            return false;
        }
        let distinct: std::collections::BTreeSet<&String> = words.iter().collect();
        if distinct.len() * 2 < words.len() {
            return false;
        }
        text.trim_end().ends_with(['.', '!', '?'])
    }
}

impl NaturalnessJudge for HeuristicJudge {
    fn judge(&self, texts: &[String]) -> Result<Vec<bool>, JudgeError> {
        Ok(texts.iter().map(|t| Self::is_natural(t)).collect())
    }
}
