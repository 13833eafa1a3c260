use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RolloutGroup, TrainError};
use crate::dialogue::{player_view, serialize_turn, Conversation, Episode, EpisodeError, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// One `{context, chosen, rejected}` record per pair with differing rewards.
    Dpo,
    /// One `{context, completions, rewards}` record per group.
    Grpo,
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "dpo" => Ok(ExportFormat::Dpo),
            "grpo" => Ok(ExportFormat::Grpo),
            other => Err(format!("unknown export format `{other}` (expected dpo or grpo)")),
        }
    }
}

/// Text-only rollout group: the context the trained player saw and each
/// branch-point reply with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportGroup {
    pub context: Vec<Message>,
    pub completions: Vec<String>,
    pub rewards: Vec<f64>,
}

impl From<&RolloutGroup<f64>> for ExportGroup {
    fn from(g: &RolloutGroup<f64>) -> Self {
        ExportGroup {
            context: g.context.clone(),
            completions: g.completions.iter().map(|c| serialize_turn(&c.content)).collect(),
            rewards: g.rewards(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExportRecord {
    Dpo { context: Vec<Message>, chosen: String, rejected: String },
    Grpo { context: Vec<Message>, completions: Vec<String>, rewards: Vec<f64> },
}

/// Rebuilds rollout groups from branch episodes in a log, in order of first
/// appearance. Episodes without branch information are ignored.
pub fn groups_from_episodes(episodes: &[Episode]) -> Result<Vec<ExportGroup>, TrainError> {
    let mut ids: Vec<&str> = Vec::new();
    let mut groups: Vec<ExportGroup> = Vec::new();
    for ep in episodes {
        let Some(b) = &ep.branch else { continue };
        let turn = ep
            .turns
            .get(b.turn)
            .ok_or_else(|| EpisodeError::Log(format!("episode {} has no turn {}", ep.episode_id, b.turn)))?;
        let completion = serialize_turn(&turn.content());
        match ids.iter().position(|id| *id == b.group_id) {
            Some(i) => {
                groups[i].completions.push(completion);
                groups[i].rewards.push(b.reward);
            }
            None => {
                let mut conv = Conversation::new(ep.spec.clone(), ep.seed);
                for t in &ep.turns[..b.turn] {
                    conv.step(t.player, t.content(), t.forced).map_err(EpisodeError::from)?;
                }
                ids.push(&b.group_id);
                groups.push(ExportGroup {
                    context: player_view(&conv, turn.player).messages,
                    completions: vec![completion],
                    rewards: vec![b.reward],
                });
            }
        }
    }
    Ok(groups)
}

/// Writes JSONL records and returns how many were written.
pub fn export_preferences<W: Write>(groups: &[ExportGroup], format: ExportFormat, mut out: W) -> Result<usize, TrainError> {
    let mut n = 0;
    let mut emit = |rec: ExportRecord, out: &mut W| -> Result<(), TrainError> {
        let line = serde_json::to_string(&rec).map_err(|e| TrainError::Config(e.to_string()))?;
        writeln!(out, "{line}")?;
        n += 1;
        Ok(())
    };
    for g in groups {
        match format {
            ExportFormat::Grpo => emit(
                ExportRecord::Grpo { context: g.context.clone(), completions: g.completions.clone(), rewards: g.rewards.clone() },
                &mut out,
            )?,
            ExportFormat::Dpo => {
                for i in 0..g.rewards.len() {
                    for j in i + 1..g.rewards.len() {
                        if g.rewards[i] == g.rewards[j] {
                            continue;
                        }
                        let (w, l) = if g.rewards[i] > g.rewards[j] { (i, j) } else { (j, i) };
                        emit(
                            ExportRecord::Dpo {
                                context: g.context.clone(),
                                chosen: g.completions[w].clone(),
                                rejected: g.completions[l].clone(),
                            },
                            &mut out,
                        )?;
                    }
                }
            }
        }
    }
    Ok(n)
}

pub fn read_export<R: BufRead>(input: R) -> Result<Vec<ExportRecord>, TrainError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TrainError::Config(format!("bad export record: {e}")))?);
    }
    Ok(out)
}
