use rand::Rng;

use crate::envs::{NavAction, NavGame, NavState, Observation, RefGame, RefGameState};
use crate::error::Result;
use crate::infometrics::per_word_mi;
use crate::listener::{select_action, Decision, ListenerModel, ListenerView};
use crate::speaker::{message_entropy, Context, DecodeMode, Message, SpeakerModel};

/// One message from a speaker and the listener's response to it.
#[derive(Debug, Clone)]
pub struct Exchange {
    /// Agent that produced the message.
    pub speaker: usize,
    /// Agent that read it; also its index into [`Rollout::views`].
    pub listener: usize,
    /// The speaker's current observation (what an annotator would be shown).
    pub observation: Observation,
    pub context: Context,
    pub message: Message,
    pub entropy: f64,
    pub prefix_dists: Vec<Vec<f64>>,
    pub decision: Decision,
    pub action: usize,
    pub log_prob: f64,
}

impl Exchange {
    pub fn word_mi(&self) -> Result<Vec<f64>> {
        per_word_mi(&self.prefix_dists)
    }
}

/// A full episode: per timestep, one exchange per listening agent.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub steps: Vec<Vec<Exchange>>,
    pub rewards: Vec<f64>,
    /// Final history state of each listening agent.
    pub views: Vec<ListenerView>,
    pub gamma: f64,
    pub success: bool,
}

impl Rollout {
    /// `G_t = sum_{s >= t} gamma^(s-t) r_s`.
    pub fn returns_to_go(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rewards.len()];
        let mut acc = 0.0;
        for t in (0..self.rewards.len()).rev() {
            acc = self.rewards[t] + self.gamma * acc;
            out[t] = acc;
        }
        out
    }

    pub fn episode_return(&self) -> f64 {
        self.returns_to_go().first().copied().unwrap_or(0.0)
    }

    pub fn env_steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn exchanges(&self) -> impl Iterator<Item = &Exchange> {
        self.steps.iter().flatten()
    }
}

fn exchange<R: Rng + ?Sized>(
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    speaker_history: &[Observation],
    speaker_id: usize,
    view: &ListenerView,
    listener_id: usize,
    rng: &mut R,
    mode: DecodeMode,
) -> Result<Exchange> {
    let context = speaker.embed_observation(speaker_history)?;
    let message = speaker.sample_message(&context, rng, mode);
    let entropy = message_entropy(&message)?;
    let prefix_dists = listener.prefix_dists(view, &message)?;
    let decision = listener.decide(view, &message.tokens)?;
    let (action, log_prob) = select_action(&decision.dist, rng, mode);
    Ok(Exchange {
        speaker: speaker_id,
        listener: listener_id,
        observation: speaker_history.last().expect("non-empty history").clone(),
        context,
        message,
        entropy,
        prefix_dists,
        decision,
        action,
        log_prob,
    })
}

/// Plays one referential round from a prepared state.
pub fn play_refgame<R: Rng + ?Sized>(
    mut state: RefGameState,
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    rng: &mut R,
    mode: DecodeMode,
) -> Result<Rollout> {
    let view = listener.view_of(&state.listener_observation())?;
    let ex = exchange(
        speaker,
        listener,
        &[state.speaker_observation()],
        0,
        &view,
        0,
        rng,
        mode,
    )?;
    let result = RefGame::step(&mut state, ex.action)?;
    Ok(Rollout {
        steps: vec![vec![ex]],
        rewards: vec![result.reward],
        views: vec![view],
        gamma: 1.0,
        success: result.info.get("correct").copied() == Some(1.0),
    })
}

pub fn collect_refgame<R: Rng + ?Sized>(
    game: &RefGame,
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    rng: &mut R,
    mode: DecodeMode,
) -> Result<Rollout> {
    let (state, _) = game.reset(rng);
    play_refgame(state, speaker, listener, rng, mode)
}

pub fn collect_nav<R: Rng + ?Sized>(
    game: &NavGame,
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    rng: &mut R,
    mode: DecodeMode,
) -> Result<Rollout> {
    let (state, obs) = game.reset(rng);
    play_nav(state, obs, speaker, listener, rng, mode)
}

/// Plays one navigation episode from a prepared state. Both agents share the
/// speaker and listener parameters; agent `i`'s message is read by agent
/// `1 - i` on the same step.
pub fn play_nav<R: Rng + ?Sized>(
    mut state: NavState,
    mut obs: Vec<Observation>,
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    rng: &mut R,
    mode: DecodeMode,
) -> Result<Rollout> {
    let mut histories: [Vec<Observation>; 2] = [Vec::new(), Vec::new()];
    let mut views = [listener.new_view(), listener.new_view()];
    let mut prev: [Option<usize>; 2] = [None, None];
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    let success;
    loop {
        for i in 0..2 {
            histories[i].push(obs[i].clone());
            listener.observe(&mut views[i], &obs[i], prev[i])?;
        }
        let mut step = Vec::with_capacity(2);
        for j in 0..2 {
            let i = 1 - j;
            step.push(exchange(
                speaker,
                listener,
                &histories[i],
                i,
                &views[j],
                j,
                rng,
                mode,
            )?);
        }
        let actions = [
            NavAction::from_index(step[0].action)?,
            NavAction::from_index(step[1].action)?,
        ];
        prev = [Some(step[0].action), Some(step[1].action)];
        let result = NavGame::step(&mut state, &actions)?;
        steps.push(step);
        rewards.push(result.reward);
        if result.done {
            success = result.info.get("success").copied() == Some(1.0);
            break;
        }
        obs = result.observations;
    }
    Ok(Rollout {
        steps,
        rewards,
        views: views.into(),
        gamma: 0.99,
        success,
    })
}
