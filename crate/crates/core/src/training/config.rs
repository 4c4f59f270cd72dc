use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::envs::nav::DEFAULT_T_MAX;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::listener::ListenerConfig;
use crate::numcore::AdamConfig;
use crate::speaker::SpeakerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Request a label when the sampled message's entropy exceeds `t_h`.
    Entropy,
    /// Request a label with probability `random_p`.
    Random,
    None,
}

/// Which terms drive the speaker's policy gradient. Annotated samples are
/// used for supervised training in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    SupervisedOnly,
    MiOnly,
    RewardOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::RewardOnly,
        Ablation::SupervisedOnly,
        Ablation::MiOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SupervisedOnly => "supervised_only",
            Ablation::MiOnly => "mi_only",
            Ablation::RewardOnly => "reward_only",
        }
    }

    pub fn parse(s: &str) -> Result<Ablation> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }

    pub fn uses_mi(self) -> bool {
        matches!(self, Ablation::Full | Ablation::MiOnly)
    }

    pub fn uses_reward(self) -> bool {
        matches!(self, Ablation::Full | Ablation::RewardOnly)
    }

    pub fn speaker_rl(self) -> bool {
        self != Ablation::SupervisedOnly
    }
}

/// Every knob of a training run. Deserializes from TOML with all fields
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub env: EnvKind,
    /// JSON token list; the built-in lexicon when absent.
    pub vocab: Option<PathBuf>,
    pub speaker: SpeakerConfig,
    pub listener: ListenerConfig,
    pub adam: AdamConfig,
    pub clip_norm: f64,

    /// Entropy threshold in nats per message.
    pub t_h: f64,
    pub budget: usize,
    pub scheduler: SchedulerMode,
    pub random_p: f64,
    pub lambda_mi: f64,
    pub beta_h: f64,
    pub ablation: Ablation,
    pub baseline_decay: f64,

    pub rounds: usize,
    pub eval_period: usize,
    /// Episodes per optimizer step.
    pub batch_size: usize,

    pub n_train: usize,
    pub n_test: usize,
    pub max_objects: usize,
    /// Evaluation episodes per test scene, each against its own distractor.
    pub eval_distractors: usize,

    pub pretrain_sentences: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,

    /// Gradient steps on each annotated sample when it arrives.
    pub arrival_epochs: usize,
    /// Rounds between replays of the whole annotation buffer.
    pub replay_period: usize,
    pub replay_batch: usize,
    pub annotation_timeout_secs: u64,

    pub layout: String,
    pub t_max: usize,
    /// Navigation training stops once this many environment steps were taken.
    pub max_env_steps: usize,
    pub nav_eval_episodes: usize,
    /// Train from starts at the target doors and widen them as training
    /// success rises; evaluation always uses the layout's start cells.
    pub nav_curriculum: bool,
    /// Training episodes in the success window that gates each widening.
    pub curriculum_window: usize,
    /// Windowed training success needed to widen the starts.
    pub curriculum_promote_at: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvKind::Refgame,
            vocab: None,
            speaker: SpeakerConfig::default(),
            listener: ListenerConfig::default(),
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            t_h: 2.0,
            budget: 300,
            scheduler: SchedulerMode::Entropy,
            random_p: 0.2,
            lambda_mi: 0.01,
            beta_h: 0.01,
            ablation: Ablation::Full,
            baseline_decay: 0.99,
            rounds: 20_000,
            eval_period: 500,
            batch_size: 1,
            n_train: 900,
            n_test: 100,
            max_objects: 1,
            eval_distractors: 5,
            pretrain_sentences: 2000,
            pretrain_epochs: 5,
            pretrain_batch: 16,
            arrival_epochs: 5,
            replay_period: 100,
            replay_batch: 16,
            annotation_timeout_secs: 300,
            layout: "three_rooms".into(),
            t_max: DEFAULT_T_MAX,
            max_env_steps: 500_000,
            nav_eval_episodes: 50,
            nav_curriculum: true,
            curriculum_window: 100,
            curriculum_promote_at: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Discount for returns: 1 for the one-step referential game.
    pub fn gamma(&self) -> f64 {
        match self.env {
            EnvKind::Refgame => 1.0,
            EnvKind::Nav => 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if !(self.t_h >= 0.0) {
            return bad("t_h", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.random_p) {
            return bad("random_p", "must lie in [0, 1]");
        }
        if !(self.lambda_mi >= 0.0) {
            return bad("lambda_mi", "must be >= 0");
        }
        if !(self.beta_h >= 0.0) {
            return bad("beta_h", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay", "must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.curriculum_promote_at) {
            return bad("curriculum_promote_at", "must lie in [0, 1]");
        }
        if !(self.adam.lr > 0.0) {
            return bad("adam.lr", "must be > 0");
        }
        for (key, v) in [
            ("rounds", self.rounds),
            ("eval_period", self.eval_period),
            ("batch_size", self.batch_size),
            ("replay_period", self.replay_period),
            ("replay_batch", self.replay_batch),
            ("pretrain_batch", self.pretrain_batch),
            ("t_max", self.t_max),
            ("nav_eval_episodes", self.nav_eval_episodes),
            ("curriculum_window", self.curriculum_window),
            ("eval_distractors", self.eval_distractors),
            ("speaker.l_max", self.speaker.l_max),
            ("speaker.hidden", self.speaker.hidden),
            ("speaker.embed_dim", self.speaker.embed_dim),
            ("listener.embed_dim", self.listener.embed_dim),
            ("listener.msg_hidden", self.listener.msg_hidden),
            ("listener.hist_hidden", self.listener.hist_hidden),
            ("listener.head_hidden", self.listener.head_hidden),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        if self.n_train < 2 || self.n_test < 2 {
            return bad("n_train/n_test", "must be at least 2");
        }
        if !(1..=crate::envs::scene::MAX_OBJECTS).contains(&self.max_objects) {
            return bad("max_objects", "must lie in 1..=3");
        }
        Ok(())
    }
}
