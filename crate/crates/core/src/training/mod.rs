//! Losses, reward shaping, optimizers and the training loop for template
//! policies, plus preference export for external trainers.

mod checkpoint;
mod export;
mod losses;
mod optim;
mod rollout;
mod run;
mod shaping;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, RngState};
pub use export::{export_preferences, groups_from_episodes, read_export, ExportFormat, ExportGroup, ExportRecord};
pub use losses::{
    dpo_pairs_loss, dpo_permutation_loss, dpo_ties_loss, grpo_advantages, grpo_batch_loss,
    grpo_completion_loss, grpo_loss, star_sft_loss, GrpoConfig, LossGrad, MAX_ORDERINGS, MAX_TIES_ITEMS,
};
pub use optim::{AdamState, Optimizer, OptimizerKind};
pub use rollout::{branch_and_rollout, star_select, BranchOutcome, BranchSelector, RewardContext, StarExample};
pub use run::{
    accumulate_gradients, evaluate, train_loop, Algo, EvalSummary, MetricsRow, TrainObserver, TrainRunConfig,
    TrainSetup, TrainSummary,
};
pub use shaping::{
    naturalness_fraction, parse_verdicts, shaped_reward, HeuristicJudge, JudgeError, NaturalnessJudge,
    RemoteJudge, RewardShapingConfig, ShapedReward,
};

use thiserror::Error;

use crate::agents::{Decision, SupportError};
pub use crate::dialogue::BranchInfo;
use crate::dialogue::{EpisodeError, Message, StepError, TurnContent};
use crate::game::Player;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("group needs at least {need} completions, got {got}")]
    GroupTooSmall { need: usize, got: usize },
    #[error("all rewards in the group are equal")]
    NoPreferencePairs,
    #[error("ranking with ties supports at most {max} items, got {got}")]
    RefuseTooLarge { max: usize, got: usize },
    #[error("completion {0} has no finite log-probabilities")]
    MissingLogprobs(usize),
    #[error("conversation ended before the trained player moved")]
    NoBranchPoint,
    #[error("signals required by the reward weights are missing")]
    MissingSignals,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<StepError> for TrainError {
    fn from(e: StepError) -> Self {
        TrainError::Episode(e.into())
    }
}

/// One branch of a rollout group: the trained player's turn at the branch
/// point, how it scores under the policy, and the reward its branch earned.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion<T = f64> {
    pub content: TurnContent,
    pub decisions: Vec<Decision<T>>,
    pub reward: T,
    /// Log-probability under the parameters that generated it.
    pub logprob_old: T,
    pub logprob_ref: T,
}

/// `k` completions sharing one conversation prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup<T = f64> {
    pub context_id: String,
    pub branch_turn: usize,
    pub player: Player,
    /// What the trained player saw at the branch point.
    pub context: Vec<Message>,
    pub completions: Vec<Completion<T>>,
}

impl<T: Copy> RolloutGroup<T> {
    pub fn rewards(&self) -> Vec<T> {
        self.completions.iter().map(|c| c.reward).collect()
    }
}
