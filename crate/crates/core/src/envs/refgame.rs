//! One-step referential game: the speaker sees which of two scenes is the
//! target, the listener must pick it.

use std::collections::BTreeMap;

use rand::Rng;

use super::scene::Scene;
use super::{Observation, StepResult};
use crate::error::{Error, Result};

pub const SUCCESS_REWARD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RefGameState {
    pub target: Scene,
    pub distractor: Scene,
    /// `(target', distractor')`: same objects, independently drawn backgrounds.
    pub speaker_view: (Scene, Scene),
    /// Listener presentation: `listener_order[i]` is 0 for the target, 1 for the distractor.
    pub listener_order: [usize; 2],
    pub done: bool,
}

impl RefGameState {
    /// Index of the target in the listener's presentation.
    pub fn target_position(&self) -> usize {
        if self.listener_order[0] == 0 {
            0
        } else {
            1
        }
    }

    pub fn speaker_observation(&self) -> Observation {
        Observation::RefSpeaker {
            scenes: [self.speaker_view.0.clone(), self.speaker_view.1.clone()],
            target: 0,
        }
    }

    pub fn listener_observation(&self) -> Observation {
        let pick = |i: usize| {
            if i == 0 {
                self.target.clone()
            } else {
                self.distractor.clone()
            }
        };
        Observation::RefListener {
            candidates: [pick(self.listener_order[0]), pick(self.listener_order[1])],
        }
    }
}

/// Referential game over a fixed pool of scenes.
#[derive(Debug, Clone)]
pub struct RefGame {
    pub scenes: Vec<Scene>,
}

impl RefGame {
    pub fn new(scenes: Vec<Scene>) -> Result<Self> {
        if scenes.len() < 2 {
            return Err(Error::Config("referential game needs at least two scenes".into()));
        }
        Ok(Self { scenes })
    }

    /// Draws a target and a differing distractor from the pool.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (RefGameState, [Observation; 2]) {
        let t = rng.gen_range(0..self.scenes.len());
        let target = self.scenes[t].clone();
        let distractor = self.sample_distractor(&target, rng);
        Self::reset_with(target, distractor, rng)
    }

    /// A uniformly drawn pool scene that differs from `target` in some object attribute.
    pub fn sample_distractor<R: Rng + ?Sized>(&self, target: &Scene, rng: &mut R) -> Scene {
        loop {
            let d = &self.scenes[rng.gen_range(0..self.scenes.len())];
            if d.differs_from(target) {
                return d.clone();
            }
        }
    }

    /// Builds an episode from a given pair; viewpoints and listener order are drawn from `rng`.
    pub fn reset_with<R: Rng + ?Sized>(
        target: Scene,
        distractor: Scene,
        rng: &mut R,
    ) -> (RefGameState, [Observation; 2]) {
        debug_assert!(target.differs_from(&distractor));
        let speaker_view = (
            target.with_new_background(rng),
            distractor.with_new_background(rng),
        );
        let listener_order = if rng.gen_bool(0.5) { [0, 1] } else { [1, 0] };
        let state = RefGameState {
            target,
            distractor,
            speaker_view,
            listener_order,
            done: false,
        };
        let obs = [state.speaker_observation(), state.listener_observation()];
        (state, obs)
    }

    /// Scores the listener's pick: 0.1 for the target, 0 otherwise. Always terminal.
    pub fn step(state: &mut RefGameState, listener_action: usize) -> Result<StepResult> {
        if state.done {
            return Err(Error::Protocol("referential episode already finished".into()));
        }
        if listener_action > 1 {
            return Err(Error::Protocol(format!(
                "listener action {listener_action} is not 0 or 1"
            )));
        }
        state.done = true;
        let correct = listener_action == state.target_position();
        let mut info = BTreeMap::new();
        info.insert("correct".to_string(), if correct { 1.0 } else { 0.0 });
        Ok(StepResult {
            observations: vec![state.speaker_observation(), state.listener_observation()],
            reward: if correct { SUCCESS_REWARD } else { 0.0 },
            done: true,
            info,
        })
    }
}
