//! The five subcommands. Each takes its parsed arguments plus the streams it
//! talks to, so tests can drive them without spawning a process.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use gametalk::agents::{AgentError, AgentPolicy, Elicitation, ElicitTarget, TemplatePolicy};
use gametalk::dialogue::{
    player_view, read_jsonl, write_jsonl, Conversation, Episode, EpisodeOptions, PlayerView, Role, Rollout, TurnContent,
};
use gametalk::game::{Action, GameKind, Player};
use gametalk::signals::signal_schedule;
use gametalk::training::{
    evaluate, export_preferences, groups_from_episodes, load_checkpoint, train_loop, Algo, EvalSummary, ExportFormat,
    Optimizer, TrainSetup,
};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_opponent, Config};
use crate::run_dir::{Manifest, RunWriter, CHECKPOINT, MANIFEST};
use crate::CliError;

pub fn parse_player(s: &str) -> Result<Player, String> {
    let n: u8 = s.trim().parse().map_err(|_| format!("player must be 1 or 2, got `{s}`"))?;
    Player::try_from(n)
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `training.algo` (grpo, dpo_pairs, dpo_perm, dpo_ties, star).
    #[arg(long)]
    pub algo: Option<Algo>,
    /// Overrides `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `training.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

/// Trains a template policy and fills `out` with the manifest, checkpoint,
/// metrics and sampled episodes. Prints the last evaluation.
pub fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    if let Some(a) = args.algo {
        config.training.algo = a;
    }
    if let Some(s) = args.seed {
        config.training.seed = s;
    }
    if let Some(s) = args.steps {
        config.training.steps = s;
    }
    if config.game.kind == GameKind::Bargaining && config.shaping.needs_signals() {
        log::warn!("signal shaping is undefined for bargaining; lo_weight and ise_weight set to 0");
        config.shaping.lo_weight = 0.0;
        config.shaping.ise_weight = 0.0;
    }
    config.training.validate()?;
    config.shaping.validate()?;
    let specs = config.specs()?;
    let opponent = parse_opponent(&config.opponent_spec())?;
    let judge = config.judge()?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let mut manifest = Manifest::new(&config);
    manifest.write(&args.out)?;

    let mut policy = TemplatePolicy::new(config.game.kind, config.agents.logit_scale);
    let setup = TrainSetup {
        specs: &specs,
        opponent: opponent.as_ref(),
        shaping: config.shaping,
        judge: judge.as_deref(),
        theta_ref: policy.model.theta.clone(),
    };
    let mut optimizer = Optimizer::new(config.training.optimizer, config.training.lr);
    let mut writer = RunWriter::create(&args.out, &config, false)?;
    let summary = train_loop(&config.training, &setup, &mut policy, &mut optimizer, 0, &mut writer)?;
    writer.finish()?;
    manifest.finished_unix = Some(crate::run_dir::now_unix());
    manifest.write(&args.out)?;

    writeln!(stdout, "trained {} steps into {}", summary.steps_done, args.out.display())?;
    if let Some(eval) = &summary.last_eval {
        write_eval_table(stdout, config.game.kind, judge.is_some(), Some(eval))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint parameter file (`checkpoint.bin`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Opponent specification; defaults to the configured one.
    #[arg(long)]
    pub opponent: Option<String>,
    /// Run configuration; defaults to the manifest next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluation seed; defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn load_config_for(checkpoint: &Path, explicit: Option<&Path>) -> Result<Config, CliError> {
    match explicit {
        Some(p) => Config::load(p),
        None => {
            let dir = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !dir.join(MANIFEST).exists() {
                return Err(CliError::Usage(format!("no --config given and no {MANIFEST} in {}", dir.display())));
            }
            Ok(Manifest::read(dir)?.config)
        }
    }
}

/// Loads a checkpoint as a template policy for `game`.
pub fn load_policy(checkpoint: &Path, game: Option<GameKind>) -> Result<TemplatePolicy<f64>, CliError> {
    let (theta, meta) = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    if let Some(g) = game {
        if meta.game != g {
            return Err(CliError::Usage(format!("checkpoint was trained on {} but the game is {g}", meta.game)));
        }
    }
    let mut policy = TemplatePolicy::new(meta.game, meta.logit_scale);
    if policy.dim() != theta.len() {
        return Err(CliError::Usage(format!(
            "checkpoint holds {} parameters, a {} policy needs {}",
            theta.len(),
            meta.game,
            policy.dim()
        )));
    }
    policy.model.theta = theta;
    Ok(policy)
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config_for(&args.checkpoint, args.config.as_deref())?;
    let policy = load_policy(&args.checkpoint, Some(config.game.kind))?;
    let specs = config.specs()?;
    let opponent = parse_opponent(&args.opponent.clone().unwrap_or_else(|| config.opponent_spec()))?;
    let judge = config.judge()?;
    let summary = evaluate(
        &specs,
        &policy,
        opponent.as_ref(),
        config.training.trained_side,
        args.episodes,
        args.seed.unwrap_or(config.training.seed),
        judge.as_deref(),
        config.training.max_resamples,
        "eval",
    )?;
    let shown = (args.episodes > 0).then_some(&summary);
    write_eval_table(stdout, config.game.kind, judge.is_some(), shown)?;
    if let Some(path) = &args.csv {
        let (cols, vals) = eval_table(config.game.kind, judge.is_some(), shown);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&cols)?;
        if let Some(vals) = vals {
            w.write_record(vals.iter().map(|v| fmt_opt(*v)))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Column names for a game, and the values of `summary` in that order. The
/// signal columns are left out for bargaining, where they are undefined.
pub fn eval_table(kind: GameKind, judged: bool, summary: Option<&EvalSummary>) -> (Vec<&'static str>, Option<Vec<Option<f64>>>) {
    let mut cols = vec!["episodes", "reward_mean", "nra"];
    match kind {
        GameKind::Rps => cols.extend(["ise", "srp", "lo", "win", "draw", "lose"]),
        GameKind::Bertrand => cols.extend(["ise", "srp", "lo", "ne"]),
        GameKind::Bargaining => cols.push("bp"),
    }
    if judged {
        cols.push("nat_fraction");
    }
    let values = summary.map(|s| {
        let wdl = s.win_draw_lose;
        cols.iter()
            .map(|c| match *c {
                "episodes" => Some(s.episodes.len() as f64),
                "reward_mean" => Some(s.reward_mean),
                "nra" => Some(s.nra),
                "ise" => s.ise,
                "srp" => s.srp,
                "lo" => s.lo,
                "win" => wdl.map(|w| w.0),
                "draw" => wdl.map(|w| w.1),
                "lose" => wdl.map(|w| w.2),
                "ne" => s.ne,
                "bp" => s.bp,
                _ => s.nat_fraction,
            })
            .collect()
    });
    (cols, values)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.0}"),
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    }
}

fn write_eval_table(out: &mut dyn Write, kind: GameKind, judged: bool, summary: Option<&EvalSummary>) -> Result<(), CliError> {
    let (cols, values) = eval_table(kind, judged, summary);
    let cells: Option<Vec<String>> = values.map(|v| v.into_iter().map(fmt_opt).collect());
    let width = |i: usize| cols[i].len().max(cells.as_ref().map_or(0, |c| c[i].len()));
    let line = |items: Vec<String>| items.iter().enumerate().map(|(i, s)| format!("{s:>w$}", w = width(i))).collect::<Vec<_>>().join("  ");
    writeln!(out, "{}", line(cols.iter().map(|c| c.to_string()).collect()))?;
    if let Some(c) = cells.clone() {
        writeln!(out, "{}", line(c))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SignalsArgs {
    /// Episode log (JSONL).
    #[arg(long)]
    pub log: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained policy, used to elicit distributions the log lacks.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Opponent used with `--checkpoint` for live elicitation.
    #[arg(long)]
    pub opponent: Option<String>,
    /// Player whose signals are computed.
    #[arg(long, default_value = "2", value_parser = parse_player)]
    pub side: Player,
}

pub const SIGNAL_COLUMNS: [&str; 9] =
    ["episode_id", "turn", "ise", "srp", "lo", "bound_lower", "e_true", "bound_upper", "violation_flag"];

/// Writes one CSV row per game action of `--side` with its signals and bounds.
pub fn cmd_signals(args: &SignalsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = File::open(&args.log).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", args.log.display())))?;
    let episodes = read_jsonl(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", args.log.display())))?;
    let live: Option<(TemplatePolicy<f64>, Box<dyn AgentPolicy>)> = match (&args.checkpoint, &args.opponent) {
        (Some(c), Some(o)) => Some((load_policy(c, None)?, parse_opponent(o)?)),
        (None, None) => None,
        _ => return Err(CliError::Usage("--checkpoint and --opponent must be given together".into())),
    };

    let sink: Box<dyn Write + '_> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(&mut *stdout),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SIGNAL_COLUMNS)?;
    for ep in &episodes {
        if ep.spec.kind() == GameKind::Bargaining {
            log::warn!("episode {}: signals are not defined for bargaining, skipped", ep.episode_id);
            continue;
        }
        let has_records = ep.elicitations.iter().any(|r| r.player == args.side);
        let elicited;
        let source = if has_records {
            ep
        } else {
            let Some((policy, opponent)) = &live else {
                return Err(CliError::Usage(format!(
                    "episode {} has no distributions for {}; pass --checkpoint and --opponent to elicit them",
                    ep.episode_id,
                    args.side.name()
                )));
            };
            elicited = elicit_live(ep, policy, opponent.as_ref(), args.side)?;
            &elicited
        };
        let rows = signal_schedule(source, args.side).map_err(|e| CliError::Runtime(format!("{}: {e}", ep.episode_id)))?;
        for (turn, r) in rows {
            w.write_record([
                ep.episode_id.clone(),
                turn.to_string(),
                r.ise.to_string(),
                r.srp.to_string(),
                r.lo.to_string(),
                r.bound_lower.to_string(),
                r.e_true.to_string(),
                r.bound_upper.to_string(),
                u8::from(r.violation).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn elicit_live(ep: &Episode, policy: &TemplatePolicy<f64>, opponent: &dyn AgentPolicy, side: Player) -> Result<Episode, CliError> {
    if policy.game != ep.spec.kind() {
        return Err(CliError::Usage(format!("checkpoint plays {} but episode {} is {}", policy.game, ep.episode_id, ep.spec.kind())));
    }
    let agents: [&dyn AgentPolicy; 2] = match side {
        Player::One => [policy, opponent],
        Player::Two => [opponent, policy],
    };
    let opts = EpisodeOptions { elicit_for: Some(side), ..EpisodeOptions::default() };
    let r = Rollout::replay_eliciting(ep, agents, &opts)?;
    Ok(Episode { elicitations: r.elicitations, ..ep.clone() })
}

#[derive(Debug, Clone, Args)]
#[command(after_help = EXPORT_SCHEMA)]
pub struct ExportArgs {
    /// Episode log (JSONL) written by `train`.
    #[arg(long)]
    pub log: PathBuf,
    /// dpo or grpo.
    #[arg(long)]
    pub format: ExportFormat,
    /// JSONL destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EXPORT_SCHEMA: &str = "\
Output is JSON Lines. Every record carries `context`, the list of chat messages
({\"role\": \"system\"|\"user\"|\"assistant\", \"content\": ...}) the trained player saw
at the branch point.
  dpo:  {\"context\": [...], \"chosen\": TEXT, \"rejected\": TEXT}
        one record per pair of branches whose rewards differ; chosen has the higher reward.
  grpo: {\"context\": [...], \"completions\": [TEXT, ...], \"rewards\": [NUMBER, ...]}
        one record per rollout group.
TEXT is a complete tagged reply (<think>, <talk>, <play>). Only episodes carrying
branch information are used.";

pub fn cmd_export(args: &ExportArgs, stdout: &mut dyn Write) -> Result<usize, CliError> {
    let file = File::open(&args.log).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", args.log.display())))?;
    let episodes = read_jsonl(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", args.log.display())))?;
    let groups = groups_from_episodes(&episodes)?;
    let n = match &args.out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let n = export_preferences(&groups, args.format, &mut w)?;
            w.flush()?;
            n
        }
        None => export_preferences(&groups, args.format, &mut *stdout)?,
    };
    log::info!("exported {n} records from {} groups", groups.len());
    Ok(n)
}

#[derive(Debug, Clone, Args)]
pub struct PlayArgs {
    /// rps, bertrand or bargaining.
    #[arg(long)]
    pub game: GameKind,
    /// Seat taken by the human (1 or 2).
    #[arg(long, default_value = "1", value_parser = parse_player)]
    pub human_side: Player,
    /// Opponent specification; defaults per game.
    #[arg(long)]
    pub opponent: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append the finished episode to this JSONL file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Optional run configuration for game parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Placeholder for the human seat; its turns never come from `act`.
struct HumanSeat;

impl AgentPolicy for HumanSeat {
    fn name(&self) -> String {
        "human".into()
    }
    fn act(&self, _: &PlayerView, _: &mut ChaCha8Rng) -> Result<String, AgentError> {
        Err(AgentError::Unavailable("human turns are read from the terminal".into()))
    }
    fn elicit(&self, _: &PlayerView, _: ElicitTarget, _: &[Action]) -> Result<Elicitation, AgentError> {
        Err(AgentError::Unavailable("human turns are read from the terminal".into()))
    }
}

/// Reads one human turn: plain text is talk, `/play ACTION` plays and
/// `TEXT /play ACTION` does both.
pub fn parse_human_line(line: &str) -> Result<TurnContent, String> {
    let line = line.trim();
    let (talk, play) = match line.split_once("/play") {
        Some((t, p)) => {
            let action: Action = p.trim().parse().map_err(|_| format!("cannot read `{}` as an action", p.trim()))?;
            (t.trim(), Some(action))
        }
        None => (line, None),
    };
    if talk.is_empty() && play.is_none() {
        return Err("empty turn".into());
    }
    Ok(TurnContent { think: String::new(), talk: (!talk.is_empty()).then(|| talk.to_string()), play })
}

pub enum PlayResult {
    Finished(Episode),
    Aborted,
}

pub fn cmd_play(args: &PlayArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<PlayResult, CliError> {
    let mut config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    config.game.kind = args.game;
    let spec = config.specs()?.swap_remove(0);
    let opponent = parse_opponent(&args.opponent.clone().unwrap_or_else(|| config.opponent_spec()))?;
    let human = args.human_side;
    let human_seat = HumanSeat;
    let agents: [&dyn AgentPolicy; 2] = match human {
        Player::One => [&human_seat, opponent.as_ref()],
        Player::Two => [opponent.as_ref(), &human_seat],
    };
    let opts = EpisodeOptions { episode_id: format!("play-{}", args.seed), algo_tag: "play".into(), ..EpisodeOptions::default() };
    let mut rollout = Rollout::new(Conversation::new(spec, args.seed));
    let mut shown = 0;
    writeln!(out, "You are {}. Type talk text, `/play ACTION` to act, or both on one line.", human.name())?;
    while !rollout.conv.is_terminal() {
        if rollout.conv.next_player() != human {
            rollout.step_agent(agents, &opts)?;
            continue;
        }
        let view = player_view(&rollout.conv, human);
        for m in view.messages.iter().skip(shown).filter(|m| m.role != Role::Assistant) {
            writeln!(out, "\n{}\n", m.content)?;
        }
        shown = view.messages.len();
        loop {
            write!(out, "> ")?;
            out.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                writeln!(out, "\ninput closed, game aborted")?;
                return Ok(PlayResult::Aborted);
            }
            let content = match parse_human_line(&line) {
                Ok(c) => c,
                Err(e) => {
                    writeln!(out, "{e}; try again")?;
                    continue;
                }
            };
            if let Err(e) = rollout.conv.check(human, &content) {
                writeln!(out, "{e}; try again")?;
                continue;
            }
            rollout.apply_turn(content)?;
            break;
        }
    }
    let view = player_view(&rollout.conv, human);
    for m in view.messages.iter().skip(shown).filter(|m| m.role != Role::Assistant) {
        writeln!(out, "\n{}\n", m.content)?;
    }
    let episode = rollout.into_episode(agents, &opts);
    let (mine, theirs) = episode.utilities_for(human);
    let label = if mine > theirs {
        "win"
    } else if mine < theirs {
        "loss"
    } else {
        "draw"
    };
    writeln!(out, "outcome: {label} ({}, {})", fmt_opt(Some(mine)), fmt_opt(Some(theirs)))?;
    if let Some(path) = &args.transcript {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = BufWriter::new(file);
        write_jsonl(&mut w, std::slice::from_ref(&episode))?;
        w.flush()?;
    }
    Ok(PlayResult::Finished(episode))
}

/// Path of the checkpoint inside a run directory.
pub fn checkpoint_in(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT)
}
