//! Observation feature encoders shared by speaker and listener.

use std::sync::Arc;

use crate::envs::scene::SCENE_FEATURES;
use crate::envs::{Layout, Observation};
use crate::error::{Error, Result};

/// Number of past navigation observations the speaker conditions on.
pub const NAV_SPEAKER_HISTORY: usize = 4;

/// Which environment's observations a model consumes, and how they are featurized.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsEncoding {
    Refgame,
    Nav { layout: Arc<Layout> },
}

impl ObsEncoding {
    /// Width of the speaker's raw feature vector.
    pub fn speaker_width(&self) -> usize {
        match self {
            ObsEncoding::Refgame => 2 * SCENE_FEATURES + 2,
            ObsEncoding::Nav { layout } => NAV_SPEAKER_HISTORY * layout.feature_width(),
        }
    }

    /// Speaker features from the observation history (most recent last).
    ///
    /// Referential game: both scene encodings followed by a one-hot target
    /// position. Navigation: the last four observation encodings, most recent
    /// first, zero-padded before the episode start.
    pub fn speaker_features(&self, history: &[Observation]) -> Result<Vec<f64>> {
        let last = history
            .last()
            .ok_or_else(|| Error::Config("empty observation history".into()))?;
        match (self, last) {
            (ObsEncoding::Refgame, Observation::RefSpeaker { scenes, target }) => {
                if *target > 1 {
                    return Err(Error::Config("target index must be 0 or 1".into()));
                }
                let mut f = scenes[0].features();
                f.extend(scenes[1].features());
                f.extend([0.0, 0.0]);
                f[2 * SCENE_FEATURES + target] = 1.0;
                Ok(f)
            }
            (ObsEncoding::Nav { layout }, Observation::Nav(_)) => {
                let w = layout.feature_width();
                let mut f = vec![0.0; NAV_SPEAKER_HISTORY * w];
                for (slot, obs) in history.iter().rev().take(NAV_SPEAKER_HISTORY).enumerate() {
                    match obs {
                        Observation::Nav(o) => {
                            f[slot * w..(slot + 1) * w].copy_from_slice(&o.features(layout))
                        }
                        _ => return Err(mismatch(self, obs)),
                    }
                }
                Ok(f)
            }
            (_, obs) => Err(mismatch(self, obs)),
        }
    }

    /// Width of one listener history-step input (observation part only).
    pub fn listener_obs_width(&self) -> usize {
        match self {
            ObsEncoding::Refgame => SCENE_FEATURES,
            ObsEncoding::Nav { layout } => layout.feature_width(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            ObsEncoding::Refgame => 2,
            ObsEncoding::Nav { .. } => crate::envs::NavAction::ALL.len(),
        }
    }

    /// Listener observation features: one vector per candidate for the
    /// referential game, a single vector for navigation.
    pub fn listener_features(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        match (self, obs) {
            (ObsEncoding::Refgame, Observation::RefListener { candidates }) => {
                Ok(candidates.iter().map(|c| c.features()).collect())
            }
            (ObsEncoding::Nav { layout }, Observation::Nav(o)) => Ok(vec![o.features(layout)]),
            _ => Err(mismatch(self, obs)),
        }
    }
}

fn mismatch(enc: &ObsEncoding, obs: &Observation) -> Error {
    let kind = match obs {
        Observation::RefSpeaker { .. } => "referential speaker",
        Observation::RefListener { .. } => "referential listener",
        Observation::Nav(_) => "navigation",
    };
    let model = match enc {
        ObsEncoding::Refgame => "referential game",
        ObsEncoding::Nav { .. } => "navigation",
    };
    Error::Config(format!("{kind} observation given to a {model} model"))
}
