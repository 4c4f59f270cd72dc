//! Word importance by mutual information with the listener's action, and
//! pruning of low-importance words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Color, RefGame, RefGameState, Scene};
use crate::error::{Error, Result};
use crate::infometrics::per_word_mi;
use crate::listener::{ListenerModel, ListenerView};
use crate::speaker::{DecodeMode, Message, SpeakerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub token: usize,
    pub position: usize,
    pub mi_nats: f64,
}

/// Per-word MI for one message as read by one listener in one context.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WordImportance {
    pub words: Vec<WordScore>,
}

impl WordImportance {
    /// Position of the most informative word (the first on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<&WordScore> = None;
        for w in &self.words {
            if best.is_none_or(|b| w.mi_nats > b.mi_nats) {
                best = Some(w);
            }
        }
        best.map(|w| w.position)
    }

    /// Median of the word scores (mean of the middle two for even counts).
    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.words.iter().map(|w| w.mi_nats).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

pub fn word_importance(listener: &ListenerModel, view: &ListenerView, msg: &Message) -> Result<WordImportance> {
    let prefixes = listener.prefix_dists(view, msg)?;
    let mi = per_word_mi(&prefixes)?;
    Ok(WordImportance {
        words: msg
            .tokens
            .iter()
            .zip(mi)
            .enumerate()
            .map(|(position, (&token, mi_nats))| WordScore {
                token,
                position,
                mi_nats,
            })
            .collect(),
    })
}

/// Drops words scoring strictly below `cutoff`, keeping order. When every
/// word would go, the single highest-scoring word is kept. The result is
/// EOS-terminated like any message (EOS is implicit in `tokens`).
pub fn prune_message(msg: &Message, importance: &WordImportance, cutoff: f64) -> Result<Message> {
    if importance.words.len() != msg.tokens.len()
        || importance
            .words
            .iter()
            .zip(&msg.tokens)
            .enumerate()
            .any(|(i, (w, &t))| w.position != i || w.token != t)
    {
        return Err(Error::Protocol("importance does not match the message".into()));
    }
    let kept: Vec<usize> = importance
        .words
        .iter()
        .filter(|w| !(w.mi_nats < cutoff))
        .map(|w| w.token)
        .collect();
    if kept.is_empty() && !msg.tokens.is_empty() {
        let best = importance.argmax().expect("non-empty message");
        return Ok(Message::from_tokens(vec![msg.tokens[best]]));
    }
    Ok(Message::from_tokens(kept))
}

/// How to pick the pruning threshold for each message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Fixed(f64),
    /// The median score of the message being pruned.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningPoint {
    pub cutoff: Cutoff,
    pub mean_length: f64,
    pub success_rate: f64,
}

/// Greedy messages for fixed referential episodes, pruned under each cutoff
/// and re-read by the listener.
pub fn pruning_curve(
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    states: &[RefGameState],
    cutoffs: &[Cutoff],
) -> Result<Vec<PruningPoint>> {
    // greedy decoding draws nothing
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut episodes = Vec::with_capacity(states.len());
    for s in states {
        let ctx = speaker.embed_observation(&[s.speaker_observation()])?;
        let msg = speaker.sample_message(&ctx, &mut rng, DecodeMode::Greedy);
        let view = listener.view_of(&s.listener_observation())?;
        let imp = word_importance(listener, &view, &msg)?;
        episodes.push((s.target_position(), msg, view, imp));
    }
    let n = episodes.len().max(1) as f64;
    cutoffs
        .iter()
        .map(|&cutoff| {
            let mut length = 0usize;
            let mut successes = 0usize;
            for (target, msg, view, imp) in &episodes {
                let c = match cutoff {
                    Cutoff::Fixed(c) => c,
                    Cutoff::Median => imp.median(),
                };
                let pruned = prune_message(msg, imp, c)?;
                length += pruned.len();
                let d = listener.decide(view, &pruned.tokens)?;
                successes += usize::from(crate::numcore::ops::argmax(&d.dist) == *target);
            }
            Ok(PruningPoint {
                cutoff,
                mean_length: length as f64 / n,
                success_rate: successes as f64 / n,
            })
        })
        .collect()
}

/// Episodes whose target and distractor differ only in the color of one
/// object, built from the given scenes.
pub fn color_only_pairs<R: Rng + ?Sized>(scenes: &[Scene], n: usize, rng: &mut R) -> Result<Vec<RefGameState>> {
    if scenes.is_empty() {
        return Err(Error::Config("no scenes to build pairs from".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = scenes.choose(rng).expect("non-empty").clone();
        let i = rng.gen_range(0..target.objects.len());
        let taken: Vec<Color> = target.objects.iter().map(|o| o.color).collect();
        let free: Vec<Color> = Color::ALL.into_iter().filter(|c| !taken.contains(c)).collect();
        let mut distractor = target.clone();
        distractor.objects[i].color = *free.choose(rng).expect("at most 3 of 7 colors are taken");
        distractor.background = Scene::random_background(&distractor.objects, rng);
        out.push(RefGame::reset_with(target, distractor, rng).0);
    }
    Ok(out)
}

/// Position of the word naming a color, if any.
pub fn color_position<S: AsRef<str>>(words: &[S]) -> Option<usize> {
    words
        .iter()
        .position(|w| Color::ALL.iter().any(|c| c.word() == w.as_ref()))
}
