//! TOML run configuration and opponent specifications.

use std::fs;
use std::path::{Path, PathBuf};

use gametalk::agents::{AgentPolicy, RemoteAgent, RemoteConfig, ScriptedAgent, DEFAULT_LOGIT_SCALE};
use gametalk::game::{
    generate_bargaining_instances, generate_bertrand_instances, load_bargaining_csv, load_bertrand_csv, GameKind,
    GameSpec, Player, RpsParams, DEFAULT_MAX_INTERACTIONS,
};
use gametalk::training::{HeuristicJudge, NaturalnessJudge, RemoteJudge, RewardShapingConfig, TrainRunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub kind: GameKind,
    /// RPS only: the player (1 or 2) that may not play paper.
    pub constrained: Option<Player>,
    pub max_interactions: u32,
    /// Bertrand rounds.
    pub rounds: u32,
    /// Generated Bertrand/bargaining instances; 0 uses the built-in example instance.
    pub instances: usize,
    pub instance_seed: u64,
    /// CSV file of instances; overrides `instances`.
    pub instances_csv: Option<PathBuf>,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            kind: GameKind::Rps,
            constrained: None,
            max_interactions: DEFAULT_MAX_INTERACTIONS,
            rounds: DEFAULT_MAX_INTERACTIONS,
            instances: 0,
            instance_seed: 0,
            instances_csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    None,
    #[default]
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    /// Opponent specification; see [`parse_opponent`]. Defaults per game.
    pub opponent: Option<String>,
    pub logit_scale: f64,
    pub judge: JudgeKind,
    /// Model name sent to the chat endpoint for remote agents and the judge.
    pub remote_model: String,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self { opponent: None, logit_scale: DEFAULT_LOGIT_SCALE, judge: JudgeKind::Heuristic, remote_model: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Training episodes are logged every this many steps (0 disables).
    pub log_episodes_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { log_episodes_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub game: GameConfig,
    pub agents: AgentsConfig,
    pub training: TrainRunConfig,
    pub shaping: RewardShapingConfig,
    pub output: OutputConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Game instances the run plays, in a fixed order.
    pub fn specs(&self) -> Result<Vec<GameSpec>, CliError> {
        let g = &self.game;
        let bad = |e: String| CliError::Usage(format!("game config: {e}"));
        let specs = match g.kind {
            GameKind::Rps => vec![GameSpec::Rps(RpsParams { constrained: g.constrained, max_interactions: g.max_interactions })],
            GameKind::Bertrand => {
                let rows = match &g.instances_csv {
                    Some(p) => load_bertrand_csv(open(p)?).map_err(|e| bad(e.to_string()))?,
                    None if g.instances > 0 => generate_bertrand_instances(g.instances, g.instance_seed),
                    None => {
                        let GameSpec::Bertrand(mut p) = GameSpec::bertrand_fixture() else { unreachable!() };
                        p.rounds = g.rounds;
                        p.max_interactions = g.rounds.max(g.max_interactions);
                        return validated(vec![GameSpec::Bertrand(p)]);
                    }
                };
                rows.iter().map(|r| r.to_spec(g.rounds)).collect()
            }
            GameKind::Bargaining => {
                let rows = match &g.instances_csv {
                    Some(p) => load_bargaining_csv(open(p)?).map_err(|e| bad(e.to_string()))?,
                    None if g.instances > 0 => generate_bargaining_instances(g.instances, g.instance_seed),
                    None => {
                        let GameSpec::Bargaining(mut p) = GameSpec::bargaining_fixture() else { unreachable!() };
                        p.max_interactions = g.max_interactions;
                        return validated(vec![GameSpec::Bargaining(p)]);
                    }
                };
                rows.iter().map(|r| r.to_spec(g.max_interactions)).collect()
            }
        };
        validated(specs)
    }

    pub fn opponent_spec(&self) -> String {
        self.agents.opponent.clone().unwrap_or_else(|| default_opponent(self.game.kind).to_string())
    }

    pub fn judge(&self) -> Result<Option<Box<dyn NaturalnessJudge>>, CliError> {
        Ok(match self.agents.judge {
            JudgeKind::None => None,
            JudgeKind::Heuristic => Some(Box::new(HeuristicJudge)),
            JudgeKind::Remote => {
                let config = remote_config(&self.agents.remote_model)?;
                Some(Box::new(RemoteJudge { config }))
            }
        })
    }
}

fn open(p: &Path) -> Result<fs::File, CliError> {
    fs::File::open(p).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", p.display())))
}

fn validated(specs: Vec<GameSpec>) -> Result<Vec<GameSpec>, CliError> {
    if specs.is_empty() {
        return Err(CliError::Usage("game config yields no instances".into()));
    }
    for s in &specs {
        s.validate().map_err(|e| CliError::Usage(format!("game config: {e}")))?;
    }
    Ok(specs)
}

pub fn default_opponent(kind: GameKind) -> &'static str {
    match kind {
        GameKind::Rps => "uniform",
        GameKind::Bertrand => "tit_for_tat",
        GameKind::Bargaining => "concession:0.3",
    }
}

fn remote_config(model: &str) -> Result<RemoteConfig, CliError> {
    let config = RemoteConfig::new("", model).with_env();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Builds an opponent from a short specification:
///
/// - `uniform`
/// - `biased_rps:R,P,S`
/// - `hint_responsive:BIAS`
/// - `tit_for_tat`
/// - `concession:RATE`
/// - `remote:MODEL` (endpoint and key from the environment)
/// - `checkpoint:PATH` (a trained template policy)
pub fn parse_opponent(spec: &str) -> Result<Box<dyn AgentPolicy>, CliError> {
    let (name, arg) = spec.trim().split_once(':').unwrap_or((spec.trim(), ""));
    let nums = || -> Result<Vec<f64>, CliError> {
        arg.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number `{x}` in opponent `{spec}`"))))
            .collect()
    };
    let scripted = |r: Result<ScriptedAgent, _>| -> Result<Box<dyn AgentPolicy>, CliError> {
        r.map(|a| Box::new(a) as Box<dyn AgentPolicy>).map_err(|e: gametalk::agents::AgentError| CliError::Usage(e.to_string()))
    };
    match name {
        "uniform" => scripted(ScriptedAgent::biased_rps(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)),
        "biased_rps" => match nums()?.as_slice() {
            [r, p, s] => scripted(ScriptedAgent::biased_rps(*r, *p, *s)),
            _ => Err(CliError::Usage(format!("`{spec}`: biased_rps takes three probabilities"))),
        },
        "hint_responsive" => match nums()?.as_slice() {
            [b] => scripted(ScriptedAgent::hint_responsive(*b)),
            _ => Err(CliError::Usage(format!("`{spec}`: hint_responsive takes one bias"))),
        },
        "tit_for_tat" => scripted(ScriptedAgent::new(gametalk::agents::ScriptedKind::BertrandTitForTat)),
        "concession" => match nums()?.as_slice() {
            [r] => scripted(ScriptedAgent::new(gametalk::agents::ScriptedKind::BargainingConcession { rate: *r })),
            _ => Err(CliError::Usage(format!("`{spec}`: concession takes one rate"))),
        },
        "checkpoint" if !arg.is_empty() => Ok(Box::new(crate::commands::load_policy(Path::new(arg), None)?)),
        "remote" if !arg.is_empty() => Ok(Box::new(RemoteAgent { config: remote_config(arg)? })),
        _ => Err(CliError::Usage(format!("unknown opponent `{spec}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_library_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.training, TrainRunConfig::default());
        assert_eq!(c.shaping, RewardShapingConfig::default());
        assert_eq!(c.specs().unwrap(), vec![GameSpec::rps()]);
    }

    #[test]
    fn sections_parse() {
        let c = Config::parse(
            "[game]\nkind = \"bertrand\"\n[training]\nalgo = \"dpo_ties\"\nsteps = 4\n[training.grpo]\nkl_coef = 0.01\n[shaping]\nlo_weight = 0.0\n",
        )
        .unwrap();
        assert_eq!(c.game.kind, GameKind::Bertrand);
        assert_eq!(c.training.steps, 4);
        assert_eq!(c.training.grpo.kl_coef, 0.01);
        assert_eq!(c.specs().unwrap(), vec![GameSpec::bertrand_fixture()]);
        assert!(Config::parse("[training]\nbogus = 1\n").is_err());
    }

    #[test]
    fn opponents() {
        assert!(parse_opponent("biased_rps:0.5,0.25,0.25").is_ok());
        assert!(parse_opponent("biased_rps:0.5,0.25").is_err());
        assert!(parse_opponent("hint_responsive:0.6").is_ok());
        assert!(parse_opponent("nobody").is_err());
    }
}
