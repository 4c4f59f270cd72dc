use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{SchedulerMode, TrainConfig};
use crate::envs::Observation;
use crate::error::Result;
use crate::oracle;

/// A query for a ground-truth utterance describing the speaker's observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub request_id: u64,
    pub round: usize,
    pub observation: Observation,
    pub sampled_message: Vec<String>,
    /// Nats.
    pub entropy: f64,
    /// Milliseconds since the Unix epoch; informational only.
    pub timestamp_ms: u64,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub request: AnnotationRequest,
    /// `None` when the annotator skipped or timed out.
    pub label: Option<Vec<String>>,
    pub dropped_words: Vec<String>,
}

/// Source of labels: the scripted oracle or a live annotator.
pub trait AnnotationProvider {
    /// Returns the label words, or `None` when the request was skipped
    /// (e.g. timed out); skipped requests do not consume budget.
    fn annotate(&mut self, request: &AnnotationRequest) -> Result<Option<Vec<String>>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleProvider;

impl AnnotationProvider for OracleProvider {
    fn annotate(&mut self, request: &AnnotationRequest) -> Result<Option<Vec<String>>> {
        oracle::describe(&request.observation).map(Some)
    }
}

/// Whether to ask for a label for a message with entropy `msg_entropy` (nats).
pub fn maybe_request_annotation<R: Rng + ?Sized>(
    msg_entropy: f64,
    cfg: &TrainConfig,
    budget_left: usize,
    rng: &mut R,
) -> bool {
    if budget_left == 0 {
        return false;
    }
    match cfg.scheduler {
        SchedulerMode::Entropy => msg_entropy > cfg.t_h,
        SchedulerMode::Random => rng.gen_bool(cfg.random_p),
        SchedulerMode::None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_budget_never_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for scheduler in [SchedulerMode::Entropy, SchedulerMode::Random] {
            let cfg = TrainConfig {
                scheduler,
                random_p: 1.0,
                ..TrainConfig::default()
            };
            assert!(!maybe_request_annotation(100.0, &cfg, 0, &mut rng));
        }
    }

    #[test]
    fn entropy_threshold_is_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig {
            t_h: 4.0,
            ..TrainConfig::default()
        };
        assert!(!maybe_request_annotation(4.0, &cfg, 10, &mut rng));
        assert!(maybe_request_annotation(4.0 + 1e-12, &cfg, 10, &mut rng));
        let none = TrainConfig {
            scheduler: SchedulerMode::None,
            ..cfg
        };
        assert!(!maybe_request_annotation(100.0, &none, 10, &mut rng));
    }

    #[test]
    fn random_mode_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TrainConfig {
            scheduler: SchedulerMode::Random,
            ..TrainConfig::default()
        };
        let hits = (0..10_000)
            .filter(|_| maybe_request_annotation(0.0, &cfg, 1, &mut rng))
            .count();
        assert!((1900..=2100).contains(&hits), "{hits}");
    }
}
