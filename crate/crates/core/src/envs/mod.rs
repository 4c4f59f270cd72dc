//! Environments: the referential game and two-agent room navigation.

pub mod nav;
pub mod refgame;
pub mod scene;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use nav::{Cell, Layout, NavAction, NavGame, NavObs, NavState, StartCurriculum};
pub use refgame::{RefGame, RefGameState};
pub use scene::{Color, Scene, SceneDataset, SceneObject, Shape};

/// A single agent's local observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    /// Speaker side of the referential game; `target` indexes `scenes`.
    RefSpeaker { scenes: [Scene; 2], target: usize },
    /// Listener side: the two candidates in presentation order, no target marker.
    RefListener { candidates: [Scene; 2] },
    Nav(NavObs),
}

/// Outcome of one environment transition. The reward is shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Refgame,
    Nav,
}
