use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rollout::{collect_nav, play_refgame, Rollout};
use crate::envs::{NavGame, RefGameState};
use crate::error::Result;
use crate::infometrics::bleu;
use crate::listener::ListenerModel;
use crate::oracle;
use crate::speaker::{DecodeMode, SpeakerModel};

/// Greedy-decoding evaluation summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean sentence BLEU of messages against the oracle description.
    pub bleu: f64,
    /// Mean message entropy in nats.
    pub mean_entropy: f64,
    /// Mean per-word mutual information in nats.
    pub mean_mi: f64,
    pub mean_return: f64,
    pub outcomes: Vec<bool>,
}

#[derive(Default)]
struct Accum {
    episodes: usize,
    successes: usize,
    ret: f64,
    messages: usize,
    bleu: f64,
    entropy: f64,
    words: usize,
    mi: f64,
    outcomes: Vec<bool>,
}

impl Accum {
    fn add(&mut self, r: &Rollout, speaker: &SpeakerModel) -> Result<()> {
        self.episodes += 1;
        self.successes += usize::from(r.success);
        self.outcomes.push(r.success);
        self.ret += r.episode_return();
        for ex in r.exchanges() {
            self.messages += 1;
            let words = speaker.vocab.decode(&ex.message.tokens);
            let reference = oracle::describe(&ex.observation)?;
            self.bleu += bleu(&words, &reference);
            self.entropy += ex.entropy;
            let mi = ex.word_mi()?;
            self.words += mi.len();
            self.mi += mi.iter().sum::<f64>();
        }
        Ok(())
    }

    fn report(self) -> EvalReport {
        let div = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        EvalReport {
            episodes: self.episodes,
            success_rate: div(self.successes as f64, self.episodes),
            bleu: div(self.bleu, self.messages),
            mean_entropy: div(self.entropy, self.messages),
            mean_mi: div(self.mi, self.words),
            mean_return: div(self.ret, self.episodes),
            outcomes: self.outcomes,
        }
    }
}

pub fn evaluate_refgame(
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    states: &[RefGameState],
) -> Result<EvalReport> {
    // greedy decoding draws nothing; the generator only satisfies the signature
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut acc = Accum::default();
    for s in states {
        let r = play_refgame(s.clone(), speaker, listener, &mut rng, DecodeMode::Greedy)?;
        acc.add(&r, speaker)?;
    }
    Ok(acc.report())
}

/// Greedy episodes from start positions drawn with `rng`.
pub fn evaluate_nav<R: Rng + ?Sized>(
    game: &NavGame,
    speaker: &SpeakerModel,
    listener: &ListenerModel,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalReport> {
    let mut acc = Accum::default();
    for _ in 0..episodes {
        let r = collect_nav(game, speaker, listener, rng, DecodeMode::Greedy)?;
        acc.add(&r, speaker)?;
    }
    Ok(acc.report())
}
