use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::{RefGame, Scene};
use crate::numcore::{grad_check, AdamConfig};

fn model(seed: u64) -> SpeakerModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpeakerModel::new(
        SpeakerConfig {
            embed_dim: 8,
            hidden: 12,
            l_max: 15,
        },
        Vocabulary::default(),
        ObsEncoding::Refgame,
        &mut rng,
    )
    .unwrap()
}

fn ref_obs(seed: u64) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes: Vec<Scene> = (0..10).map(|_| Scene::random(1, &mut rng)).collect();
    let game = RefGame::new(scenes).unwrap();
    game.reset(&mut rng).0.speaker_observation()
}

fn ids(m: &SpeakerModel, words: &[&str]) -> Vec<usize> {
    m.vocab.encode(words).unwrap()
}

#[test]
fn next_token_dist_normalized_and_masked() {
    let m = model(1);
    let ctx = m.embed_observation(&[ref_obs(2)]).unwrap();
    let d = m.next_token_dist(&ctx, &[]).unwrap();
    assert_eq!(d, m.next_token_dist(&ctx, &[]).unwrap());
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(d[m.vocab.pad()], 0.0);
    assert_eq!(d[m.vocab.bos()], 0.0);
}

#[test]
fn prefix_at_l_max_is_rejected() {
    let m = model(1);
    let ctx = Context::zeroed(m.context_width());
    let red = m.vocab.id("red").unwrap();
    assert!(m.next_token_dist(&ctx, &[red; 14]).is_ok());
    assert!(matches!(
        m.next_token_dist(&ctx, &[red; 15]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn swapping_target_changes_context() {
    let m = model(3);
    let obs = ref_obs(4);
    let swapped = match &obs {
        Observation::RefSpeaker { scenes, target } => Observation::RefSpeaker {
            scenes: scenes.clone(),
            target: 1 - target,
        },
        _ => unreachable!(),
    };
    let a = m.embed_observation(&[obs.clone()]).unwrap();
    let b = m.embed_observation(&[swapped]).unwrap();
    assert_eq!(a, m.embed_observation(&[obs]).unwrap());
    assert_ne!(a.value(), b.value());
    assert_eq!(a.value().len(), m.context_width());
}

#[test]
fn wrong_environment_observation_is_config_error() {
    let m = model(3);
    let obs = match ref_obs(4) {
        Observation::RefSpeaker { scenes, .. } => Observation::RefListener { candidates: scenes },
        _ => unreachable!(),
    };
    assert!(matches!(m.embed_observation(&[obs]), Err(Error::Config(_))));
}

#[test]
fn sampled_log_probs_match_recorded_dists() {
    let m = model(5);
    let ctx = m.embed_observation(&[ref_obs(6)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let msg = m.sample_message(&ctx, &mut rng, DecodeMode::Sample);
        let steps = msg.steps.as_ref().unwrap();
        assert!(msg.len() <= 15);
        assert_eq!(steps.len(), msg.len() + 1);
        let emitted = msg.with_eos(m.vocab.eos());
        for (k, (s, &t)) in steps.iter().zip(&emitted).enumerate() {
            assert!((s.log_prob - s.dist[t].ln()).abs() < 1e-12, "step {k}");
        }
        assert!(!msg.tokens.iter().any(|&t| m.vocab.is_reserved(t)));
        let h = message_entropy(&msg).unwrap();
        assert!(h >= 0.0 && h <= (msg.len() + 1) as f64 * (m.vocab.len() as f64).ln());
    }
}

#[test]
fn greedy_decoding_is_deterministic() {
    let m = model(5);
    let ctx = m.embed_observation(&[ref_obs(6)]).unwrap();
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(
        m.sample_message(&ctx, &mut r1, DecodeMode::Greedy),
        m.sample_message(&ctx, &mut r2, DecodeMode::Greedy)
    );
}

#[test]
fn message_entropy_of_uniform_steps() {
    let uniform = vec![1.0 / 50.0; 50];
    let msg = Message {
        tokens: vec![3, 4],
        steps: Some(
            (0..3)
                .map(|_| StepRecord {
                    dist: uniform.clone(),
                    log_prob: (1.0f64 / 50.0).ln(),
                })
                .collect(),
        ),
    };
    assert!((message_entropy(&msg).unwrap() - 11.736069016284437).abs() < 1e-12);
    let one_hot = Message {
        tokens: vec![],
        steps: Some(vec![StepRecord {
            dist: vec![0.0, 1.0, 0.0],
            log_prob: 0.0,
        }]),
    };
    assert_eq!(message_entropy(&one_hot).unwrap(), 0.0);
    assert!(matches!(
        message_entropy(&Message::from_tokens(vec![3])),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn entropy_depends_only_on_recorded_dists() {
    let d = vec![0.2, 0.3, 0.5];
    let mk = |tok: usize| Message {
        tokens: vec![tok],
        steps: Some(vec![
            StepRecord {
                dist: d.clone(),
                log_prob: d[tok].ln(),
            },
            StepRecord {
                dist: d.clone(),
                log_prob: d[2].ln(),
            },
        ]),
    };
    assert_eq!(message_entropy(&mk(0)).unwrap(), message_entropy(&mk(1)).unwrap());
}

#[test]
fn cross_entropy_bounds_label_entropy() {
    let mut m = model(8);
    let ctx = m.embed_observation(&[ref_obs(9)]).unwrap();
    let labels = [
        ids(&m, &["purple", "box"]),
        ids(&m, &["purple", "ball"]),
        ids(&m, &["red", "box"]),
        ids(&m, &["purple", "box"]),
    ];
    let ce: f64 = labels
        .iter()
        .map(|l| m.ce_supervised_ids(&ctx, l).unwrap())
        .sum::<f64>()
        / labels.len() as f64;
    // empirical label distribution: purple box 1/2, purple ball 1/4, red box 1/4
    let label_entropy = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
    assert!(ce >= label_entropy);
    let first = m.next_token_dist(&ctx, &[]).unwrap();
    let purple = m.vocab.id("purple").unwrap();
    let red = m.vocab.id("red").unwrap();
    let step_ce = -(0.75 * first[purple].ln() + 0.25 * first[red].ln());
    let step_h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    assert!(step_ce >= step_h);
}

#[test]
fn unknown_label_word_is_annotation_error() {
    let mut m = model(8);
    let ctx = Context::zeroed(m.context_width());
    match m.ce_supervised_step(&ctx, &["purple", "zebra"]) {
        Err(Error::UnknownToken { token }) => assert_eq!(token, "zebra"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn overlong_label_is_protocol_error() {
    let mut m = model(8);
    let ctx = Context::zeroed(m.context_width());
    let red = m.vocab.id("red").unwrap();
    assert!(m.ce_supervised_ids(&ctx, &[red; 15]).is_ok());
    assert!(matches!(
        m.ce_supervised_ids(&ctx, &[red; 16]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn overfit_single_pair_reproduces_label() {
    let mut m = model(10);
    let obs = ref_obs(11);
    let label = ids(&m, &["red", "box"]);
    let adam = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    let mut loss = f64::INFINITY;
    for _ in 0..2000 {
        let ctx = m.embed_observation(&[obs.clone()]).unwrap();
        m.store.zero_grads();
        loss = m.ce_supervised_ids(&ctx, &label).unwrap();
        if loss < 1e-3 {
            break;
        }
        m.store.adam_step(&adam).unwrap();
    }
    assert!(loss < 1e-3, "loss {loss}");
    let ctx = m.embed_observation(&[obs]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let msg = m.sample_message(&ctx, &mut rng, DecodeMode::Greedy);
    assert_eq!(m.vocab.decode(&msg.tokens), vec!["red", "box"]);
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let mut m = model(12);
    let obs = ref_obs(13);
    let label = ids(&m, &["green", "ball", "left"]);
    let mut store = std::mem::take(&mut m.store);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let err = grad_check(
        &mut store,
        |s| {
            std::mem::swap(&mut m.store, s);
            m.store.zero_grads();
            let ctx = m.embed_observation(&[obs.clone()]).unwrap();
            let l = m.ce_supervised_ids(&ctx, &label).unwrap();
            std::mem::swap(&mut m.store, s);
            l
        },
        1e-6,
        40,
        &mut rng,
    );
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    let mut m = model(15);
    let obs = ref_obs(16);
    let targets = {
        let mut t = ids(&m, &["blue", "on", "the"]);
        t.push(m.vocab.eos());
        t
    };
    let weights = [0.7, -1.3, 0.2, 2.0];
    let mut store = std::mem::take(&mut m.store);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let err = grad_check(
        &mut store,
        |s| {
            std::mem::swap(&mut m.store, s);
            m.store.zero_grads();
            let ctx = m.embed_observation(&[obs.clone()]).unwrap();
            let l = m.weighted_nll_backward(&ctx, &targets, &weights).unwrap();
            std::mem::swap(&mut m.store, s);
            l
        },
        1e-6,
        40,
        &mut rng,
    );
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn forced_eos_step_carries_no_gradient() {
    let mut m = model(18);
    let ctx = Context::zeroed(m.context_width());
    let red = m.vocab.id("red").unwrap();
    let mut full = vec![red; 15];
    full.push(m.vocab.eos());
    let mut w = vec![1.0; 15];
    w.push(1.0);
    m.store.zero_grads();
    let with_eos = m.weighted_nll_backward(&ctx, &full, &w).unwrap();
    m.store.zero_grads();
    let body_only = m.weighted_nll_backward(&ctx, &full[..15], &w[..15]).unwrap();
    assert_eq!(with_eos, body_only);
}
