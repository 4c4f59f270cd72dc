//! The learning pipeline: language-model pretraining, rollouts, policy
//! gradients for listener and speaker, annotation scheduling and evaluation.

pub mod annotation;
pub mod config;
pub mod eval;
pub mod rollout;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::ObsEncoding;
use crate::envs::{EnvKind, NavGame, RefGame, RefGameState, SceneDataset, StartCurriculum};
use crate::error::{Error, Result};
use crate::listener::ListenerModel;
use crate::numcore::{AdamConfig, Checkpoint, ParamStore};
use crate::oracle;
use crate::speaker::{Context, DecodeMode, SpeakerModel, Vocabulary};

pub use annotation::{
    maybe_request_annotation, AnnotationProvider, AnnotationRecord, AnnotationRequest,
    OracleProvider,
};
pub use config::{Ablation, SchedulerMode, TrainConfig};
pub use eval::EvalReport;
pub use rollout::{collect_nav, collect_refgame, play_nav, play_refgame, Exchange, Rollout};

/// Teacher-forced CE training with a zeroed context. Returns the mean
/// per-token cross-entropy of every epoch (empty for zero epochs).
pub fn pretrain_lm<R: Rng + ?Sized>(
    speaker: &mut SpeakerModel,
    corpus: &[Vec<usize>],
    epochs: usize,
    batch: usize,
    adam: &AdamConfig,
    clip_norm: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    let ctx = Context::zeroed(speaker.context_width());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut means = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(batch.max(1)) {
            speaker.store.zero_grads();
            for &i in chunk {
                total += speaker.ce_supervised_ids(&ctx, &corpus[i])?;
                tokens += corpus[i].len() + 1;
            }
            scale_grads(&mut speaker.store, 1.0 / chunk.len() as f64);
            speaker.store.clip_grad_norm(clip_norm);
            speaker.store.adam_step(adam)?;
        }
        let mean = total / tokens as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("pretraining diverged in epoch {epoch}")));
        }
        debug!("pretrain epoch {epoch}: mean token CE {mean:.4}");
        means.push(mean);
    }
    Ok(means)
}

fn scale_grads(store: &mut ParamStore, k: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        store.grad_mut(id).iter_mut().for_each(|g| *g *= k);
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub success_rate: f64,
    pub bleu: f64,
    pub mean_entropy: f64,
    pub mean_mi: f64,
    pub annotations_used: usize,
    #[serde(rename = "return")]
    pub ret: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "round,success_rate,bleu,mean_entropy,mean_mi,annotations_used,return";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.success_rate,
            self.bleu,
            self.mean_entropy,
            self.mean_mi,
            self.annotations_used,
            self.ret
        )
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub code_version: String,
    pub provider: String,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, provider: &str) -> Self {
        Self {
            config: config.clone(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            provider: provider.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct LabeledSample {
    context: Context,
    tokens: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Task {
    Ref {
        game: RefGame,
        eval_states: Vec<RefGameState>,
    },
    Nav {
        game: NavGame,
        curriculum: Option<StartCurriculum>,
        /// Training outcomes at the current curriculum level.
        recent: VecDeque<bool>,
    },
}

/// Seeds for the independent random streams of a run.
fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

/// Owns the models, environment and bookkeeping of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub speaker: SpeakerModel,
    pub listener: ListenerModel,
    task: Task,
    test_scenes: Vec<crate::envs::Scene>,
    rng: ChaCha8Rng,
    sched_rng: ChaCha8Rng,
    listener_baselines: Vec<f64>,
    speaker_baselines: Vec<f64>,
    buffer: Vec<LabeledSample>,
    annotations_used: usize,
    next_request_id: u64,
    round: usize,
    env_steps: usize,
    records: Vec<AnnotationRecord>,
    nav_eval_outcomes: Vec<bool>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = match &cfg.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::default(),
        };
        let mut data_rng = stream(cfg.seed, 1);
        let mut init_rng = stream(cfg.seed, 2);
        let (task, encoding, test_scenes) = match cfg.env {
            EnvKind::Refgame => {
                let data = SceneDataset::generate(cfg.n_train, cfg.n_test, cfg.max_objects, &mut data_rng)?;
                let test_game = RefGame::new(data.test.clone())?;
                let mut eval_rng = stream(cfg.seed, 3);
                let mut eval_states = Vec::with_capacity(data.test.len() * cfg.eval_distractors);
                for t in &data.test {
                    for _ in 0..cfg.eval_distractors {
                        let d = test_game.sample_distractor(t, &mut eval_rng);
                        eval_states.push(RefGame::reset_with(t.clone(), d, &mut eval_rng).0);
                    }
                }
                (
                    Task::Ref {
                        game: RefGame::new(data.train)?,
                        eval_states,
                    },
                    ObsEncoding::Refgame,
                    data.test,
                )
            }
            EnvKind::Nav => {
                let game = NavGame::new(&cfg.layout, cfg.t_max)?;
                let layout = Arc::clone(&game.layout);
                let curriculum = cfg.nav_curriculum.then(|| StartCurriculum::new(&game.layout));
                let task = Task::Nav {
                    game,
                    curriculum,
                    recent: VecDeque::new(),
                };
                (task, ObsEncoding::Nav { layout }, Vec::new())
            }
        };
        let speaker = SpeakerModel::new(cfg.speaker, vocab.clone(), encoding.clone(), &mut init_rng)?;
        let listener = ListenerModel::new(cfg.listener, &vocab, encoding, &mut init_rng)?;
        let horizon = match cfg.env {
            EnvKind::Refgame => 1,
            EnvKind::Nav => cfg.t_max,
        };
        Ok(Self {
            listener_baselines: vec![0.0; horizon],
            speaker_baselines: vec![0.0; cfg.speaker.l_max + 1],
            rng: stream(cfg.seed, 4),
            sched_rng: stream(cfg.seed, 5),
            speaker,
            listener,
            task,
            test_scenes,
            buffer: Vec::new(),
            annotations_used: 0,
            next_request_id: 0,
            round: 0,
            env_steps: 0,
            records: Vec::new(),
            nav_eval_outcomes: Vec::new(),
            cfg,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn annotations_used(&self) -> usize {
        self.annotations_used
    }

    pub fn budget_left(&self) -> usize {
        self.cfg.budget.saturating_sub(self.annotations_used)
    }

    pub fn test_scenes(&self) -> &[crate::envs::Scene] {
        &self.test_scenes
    }

    /// Fixed evaluation episodes of the referential game (empty for navigation).
    pub fn eval_states(&self) -> &[RefGameState] {
        match &self.task {
            Task::Ref { eval_states, .. } => eval_states,
            Task::Nav { .. } => &[],
        }
    }

    /// Outcomes of every navigation evaluation episode so far, in order.
    pub fn nav_eval_outcomes(&self) -> &[bool] {
        &self.nav_eval_outcomes
    }

    /// Annotation log entries accumulated since the last call.
    pub fn drain_records(&mut self) -> Vec<AnnotationRecord> {
        std::mem::take(&mut self.records)
    }

    /// True once the configured number of rounds (or navigation steps) is reached.
    pub fn finished(&self) -> bool {
        match self.cfg.env {
            EnvKind::Refgame => self.round >= self.cfg.rounds,
            EnvKind::Nav => self.round >= self.cfg.rounds || self.env_steps >= self.cfg.max_env_steps,
        }
    }

    /// Builds the synthetic corpus and pretrains the speaker on it.
    pub fn pretrain(&mut self) -> Result<Vec<f64>> {
        let mut rng = stream(self.cfg.seed, 6);
        let words = match &self.task {
            Task::Ref { .. } => {
                oracle::gen_pretrain_corpus(self.cfg.pretrain_sentences, self.cfg.max_objects, &mut rng)
            }
            Task::Nav { game, .. } => oracle::gen_nav_corpus(self.cfg.pretrain_sentences, &game.layout, &mut rng),
        };
        let l_max = self.cfg.speaker.l_max;
        let corpus: Vec<Vec<usize>> = words
            .iter()
            .map(|w| self.speaker.vocab.encode(w).map(|mut ids| {
                ids.truncate(l_max);
                ids
            }))
            .collect::<Result<_>>()?;
        if corpus.is_empty() {
            return Ok(Vec::new());
        }
        let means = pretrain_lm(
            &mut self.speaker,
            &corpus,
            self.cfg.pretrain_epochs,
            self.cfg.pretrain_batch,
            &self.cfg.adam,
            self.cfg.clip_norm,
            &mut rng,
        )?;
        // optimizer moments from pretraining do not carry into the task
        let ckpt = self.speaker.store.to_checkpoint();
        self.speaker.store.load_checkpoint(&ckpt)?;
        if let Some(m) = means.last() {
            info!("pretraining finished: mean token CE {m:.4}");
        }
        Ok(means)
    }

    fn collect(&mut self) -> Result<Rollout> {
        match &mut self.task {
            Task::Ref { game, .. } => {
                collect_refgame(game, &self.speaker, &self.listener, &mut self.rng, DecodeMode::Sample)
            }
            Task::Nav {
                game,
                curriculum,
                recent,
            } => {
                let (state, obs) = match curriculum.as_ref().filter(|c| !c.complete()) {
                    Some(c) => {
                        let starts = [c.cells(0, &game.layout), c.cells(1, &game.layout)];
                        game.reset_from([&starts[0], &starts[1]], &mut self.rng)?
                    }
                    None => game.reset(&mut self.rng),
                };
                let rollout = play_nav(state, obs, &self.speaker, &self.listener, &mut self.rng, DecodeMode::Sample)?;
                if let Some(c) = curriculum.as_mut().filter(|c| !c.complete()) {
                    recent.push_back(rollout.success);
                    if recent.len() > self.cfg.curriculum_window {
                        recent.pop_front();
                    }
                    let rate = recent.iter().filter(|&&s| s).count() as f64 / recent.len() as f64;
                    if recent.len() == self.cfg.curriculum_window && rate >= self.cfg.curriculum_promote_at {
                        c.level += 1;
                        recent.clear();
                        info!(
                            "navigation starts widened to level {} of {} after {} steps",
                            c.level,
                            c.max_level() + 1,
                            self.env_steps
                        );
                    }
                }
                Ok(rollout)
            }
        }
    }

    /// Current start-curriculum level for navigation, if one is active.
    pub fn curriculum_level(&self) -> Option<usize> {
        match &self.task {
            Task::Nav {
                curriculum: Some(c), ..
            } => Some(c.level),
            _ => None,
        }
    }

    /// One round: collect a batch of episodes, update listener and speaker by
    /// policy gradient, then request labels for uncertain messages and train
    /// on them. Returns the mean episode return of the batch.
    pub fn step_round(&mut self, provider: &mut dyn AnnotationProvider) -> Result<f64> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let r = self.collect()?;
            self.env_steps += r.env_steps();
            batch.push(r);
        }
        self.round += 1;
        if self.cfg.ablation.speaker_rl() {
            self.speaker_update(&batch)?;
        }
        self.listener_update(&batch)?;
        for r in &batch {
            for ex in r.exchanges() {
                self.consider_annotation(ex, provider)?;
            }
        }
        if self.round % self.cfg.replay_period == 0 {
            self.replay_buffer()?;
        }
        Ok(batch.iter().map(Rollout::episode_return).sum::<f64>() / batch.len() as f64)
    }

    fn consider_annotation(&mut self, ex: &Exchange, provider: &mut dyn AnnotationProvider) -> Result<()> {
        if !maybe_request_annotation(ex.entropy, &self.cfg, self.budget_left(), &mut self.sched_rng) {
            return Ok(());
        }
        let request = AnnotationRequest {
            request_id: self.next_request_id,
            round: self.round,
            observation: ex.observation.clone(),
            sampled_message: self.speaker.vocab.decode(&ex.message.tokens),
            entropy: ex.entropy,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        self.next_request_id += 1;
        let reply = provider.annotate(&request)?;
        let mut record = AnnotationRecord {
            request,
            label: None,
            dropped_words: Vec::new(),
        };
        if let Some(words) = reply {
            let (mut ids, dropped) = self.speaker.vocab.filter_text(&words.join(" "));
            if !dropped.is_empty() {
                warn!("annotation {}: dropped unknown words {dropped:?}", record.request.request_id);
            }
            ids.truncate(self.cfg.speaker.l_max);
            record.dropped_words = dropped;
            if ids.is_empty() {
                warn!("annotation {} had no usable words; skipped", record.request.request_id);
            } else {
                record.label = Some(self.speaker.vocab.decode(&ids));
                self.annotations_used += 1;
                let sample = LabeledSample {
                    context: ex.context.clone(),
                    tokens: ids,
                };
                for _ in 0..self.cfg.arrival_epochs {
                    self.ce_step(std::slice::from_ref(&sample))?;
                }
                self.buffer.push(sample);
            }
        }
        self.records.push(record);
        Ok(())
    }

    fn ce_step(&mut self, samples: &[LabeledSample]) -> Result<f64> {
        self.speaker.store.zero_grads();
        let mut total = 0.0;
        for s in samples {
            let ctx = self.speaker.refresh_context(&s.context);
            total += self.speaker.ce_supervised_ids(&ctx, &s.tokens)?;
        }
        scale_grads(&mut self.speaker.store, 1.0 / samples.len() as f64);
        self.speaker.store.clip_grad_norm(self.cfg.clip_norm);
        self.speaker.store.adam_step(&self.cfg.adam)?;
        Ok(total / samples.len() as f64)
    }

    fn replay_buffer(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let mut order: Vec<usize> = (0..self.buffer.len()).collect();
        order.shuffle(&mut self.sched_rng);
        let buffer = std::mem::take(&mut self.buffer);
        let result = order.chunks(self.cfg.replay_batch).try_for_each(|chunk| {
            let samples: Vec<LabeledSample> = chunk.iter().map(|&i| buffer[i].clone()).collect();
            self.ce_step(&samples).map(|_| ())
        });
        self.buffer = buffer;
        result
    }

    /// Score-function update of the speaker with per-word rewards
    /// `lambda * MI_k + G_t` against per-position moving-average baselines.
    pub fn speaker_update(&mut self, batch: &[Rollout]) -> Result<f64> {
        let ablation = self.cfg.ablation;
        let lambda = if ablation.uses_mi() { self.cfg.lambda_mi } else { 0.0 };
        let use_reward = ablation.uses_reward();
        let decay = self.cfg.baseline_decay;
        let eos = self.speaker.vocab.eos();
        let l_max = self.cfg.speaker.l_max;
        let n: usize = batch.iter().map(|r| r.exchanges().count()).sum();
        if n == 0 {
            return Ok(0.0);
        }
        self.speaker.store.zero_grads();
        let mut objective = 0.0;
        for r in batch {
            let returns = r.returns_to_go();
            for (t, step) in r.steps.iter().enumerate() {
                for ex in step {
                    let mi = ex.word_mi()?;
                    let g = if use_reward { returns[t] } else { 0.0 };
                    let targets = ex.message.with_eos(eos);
                    let scored = targets.len().min(l_max);
                    let mut weights = Vec::with_capacity(scored);
                    for k in 0..scored {
                        let reward = mi.get(k).map_or(0.0, |m| lambda * m) + g;
                        let adv = reward - self.speaker_baselines[k];
                        self.speaker_baselines[k] = decay * self.speaker_baselines[k] + (1.0 - decay) * reward;
                        objective += reward;
                        weights.push(adv / n as f64);
                    }
                    self.speaker
                        .weighted_nll_backward(&ex.context, &targets[..scored], &weights)?;
                }
            }
        }
        self.speaker.store.clip_grad_norm(self.cfg.clip_norm);
        self.speaker.store.adam_step(&self.cfg.adam)?;
        Ok(objective / n as f64)
    }

    /// REINFORCE on the listener with return-to-go minus a per-timestep
    /// moving-average baseline, plus an entropy bonus.
    pub fn listener_update(&mut self, batch: &[Rollout]) -> Result<f64> {
        let decay = self.cfg.baseline_decay;
        self.listener.store.zero_grads();
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for r in batch {
            let returns = r.returns_to_go();
            let advantages: Vec<f64> = returns
                .iter()
                .enumerate()
                .map(|(t, g)| (g - self.listener_baselines[t]) * scale)
                .collect();
            for (t, g) in returns.iter().enumerate() {
                self.listener_baselines[t] = decay * self.listener_baselines[t] + (1.0 - decay) * g;
            }
            for (j, view) in r.views.iter().enumerate() {
                let mut decisions = Vec::new();
                let mut actions = Vec::new();
                for step in &r.steps {
                    for ex in step.iter().filter(|e| e.listener == j) {
                        decisions.push(ex.decision.clone());
                        actions.push(ex.action);
                    }
                }
                total += self.listener.reinforce_backward(
                    view,
                    &decisions,
                    &actions,
                    &advantages[..decisions.len()],
                    self.cfg.beta_h * scale,
                )?;
            }
        }
        self.listener.store.clip_grad_norm(self.cfg.clip_norm);
        self.listener.store.adam_step(&self.cfg.adam)?;
        Ok(total)
    }

    /// Greedy evaluation on the held-out protocol.
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        match &self.task {
            Task::Ref { eval_states, .. } => {
                eval::evaluate_refgame(&self.speaker, &self.listener, eval_states)
            }
            Task::Nav { game, .. } => {
                let mut rng = stream(self.cfg.seed, 7 + self.round as u64);
                let report = eval::evaluate_nav(
                    game,
                    &self.speaker,
                    &self.listener,
                    self.cfg.nav_eval_episodes,
                    &mut rng,
                )?;
                self.nav_eval_outcomes.extend(report.outcomes.iter().copied());
                Ok(report)
            }
        }
    }

    pub fn metrics_row(&self, report: &EvalReport) -> MetricsRow {
        MetricsRow {
            round: self.round,
            success_rate: report.success_rate,
            bleu: report.bleu,
            mean_entropy: report.mean_entropy,
            mean_mi: report.mean_mi,
            annotations_used: self.annotations_used,
            ret: report.mean_return,
        }
    }

    /// Both models' parameters in one document (block names are prefixed
    /// `speaker.` and `listener.`).
    pub fn checkpoint(&self) -> Checkpoint {
        let mut all = BTreeMap::new();
        all.extend(self.speaker.store.to_checkpoint().0);
        all.extend(self.listener.store.to_checkpoint().0);
        Checkpoint(all)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let split = |prefix: &str| {
            Checkpoint(
                ckpt.0
                    .iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
            )
        };
        self.speaker.store.load_checkpoint(&split("speaker."))?;
        self.listener.store.load_checkpoint(&split("listener."))?;
        Ok(())
    }

    /// Runs rounds until finished, evaluating every `eval_period` rounds and
    /// handing each metrics row to `on_eval`.
    pub fn run<F, E>(
        &mut self,
        provider: &mut dyn AnnotationProvider,
        mut on_eval: F,
    ) -> std::result::Result<Vec<MetricsRow>, E>
    where
        F: FnMut(&mut Trainer, &MetricsRow) -> std::result::Result<(), E>,
        E: From<Error>,
    {
        let mut rows = Vec::new();
        while !self.finished() {
            self.step_round(provider)?;
            if self.round % self.cfg.eval_period == 0 || self.finished() {
                let report = self.evaluate()?;
                let row = self.metrics_row(&report);
                info!(
                    "round {}: success {:.3} bleu {:.3} entropy {:.3} mi {:.4} annotations {}",
                    row.round, row.success_rate, row.bleu, row.mean_entropy, row.mean_mi, row.annotations_used
                );
                on_eval(self, &row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Pretrains and trains a run with the oracle annotator; returns the metrics table.
pub fn train(cfg: TrainConfig, provider: &mut dyn AnnotationProvider) -> Result<(Trainer, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(cfg)?;
    trainer.pretrain()?;
    let rows = trainer.run(provider, |_, _| Ok::<_, Error>(()))?;
    Ok((trainer, rows))
}

#[cfg(test)]
mod tests;
