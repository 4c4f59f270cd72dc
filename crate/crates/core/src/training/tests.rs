use super::*;

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        rounds: 40,
        eval_period: 20,
        n_train: 40,
        n_test: 10,
        pretrain_sentences: 100,
        pretrain_epochs: 2,
        budget: 5,
        t_h: 0.0,
        replay_period: 10,
        speaker: crate::speaker::SpeakerConfig {
            hidden: 16,
            embed_dim: 8,
            l_max: 8,
        },
        ..TrainConfig::default()
    }
}

struct Skipper(usize);

impl AnnotationProvider for Skipper {
    fn annotate(&mut self, _: &AnnotationRequest) -> Result<Option<Vec<String>>> {
        self.0 += 1;
        Ok(None)
    }
}

struct Noisy;

impl AnnotationProvider for Noisy {
    fn annotate(&mut self, _: &AnnotationRequest) -> Result<Option<Vec<String>>> {
        Ok(Some(vec!["red".into(), "zebra".into(), "box".into()]))
    }
}

#[test]
fn pretraining_lowers_cross_entropy() {
    let cfg = TrainConfig {
        pretrain_epochs: 4,
        pretrain_sentences: 300,
        ..tiny(0)
    };
    let mut t = Trainer::new(cfg).unwrap();
    let means = t.pretrain().unwrap();
    assert_eq!(means.len(), 4);
    assert!(means[3] < means[0], "{means:?}");
}

#[test]
fn zero_pretraining_epochs_is_a_no_op() {
    let mut t = Trainer::new(TrainConfig {
        pretrain_epochs: 0,
        ..tiny(0)
    })
    .unwrap();
    let before = t.speaker.store.to_checkpoint();
    assert!(t.pretrain().unwrap().is_empty());
    assert_eq!(t.speaker.store.to_checkpoint(), before);
}

#[test]
fn budget_caps_annotations() {
    let (t, rows) = train(tiny(1), &mut OracleProvider).unwrap();
    assert_eq!(t.annotations_used(), 5);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.annotations_used <= 5));
}

#[test]
fn skipped_annotations_do_not_consume_budget() {
    let mut t = Trainer::new(tiny(2)).unwrap();
    let mut p = Skipper(0);
    for _ in 0..10 {
        t.step_round(&mut p).unwrap();
    }
    assert_eq!(p.0, 10);
    assert_eq!(t.annotations_used(), 0);
    let recs = t.drain_records();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.label.is_none()));
}

#[test]
fn unknown_label_words_are_dropped() {
    let mut t = Trainer::new(tiny(3)).unwrap();
    t.step_round(&mut Noisy).unwrap();
    let recs = t.drain_records();
    assert_eq!(recs[0].label.as_deref(), Some(&["red".to_string(), "box".to_string()][..]));
    assert_eq!(recs[0].dropped_words, vec!["zebra".to_string()]);
    assert_eq!(t.annotations_used(), 1);
}

#[test]
fn runs_are_reproducible() {
    let csv = |seed| {
        let (_, rows) = train(tiny(seed), &mut OracleProvider).unwrap();
        rows.iter().map(MetricsRow::to_csv).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(csv(4), csv(4));
    assert_ne!(csv(4), csv(5));
}

#[test]
fn checkpoint_round_trip_restores_policy() {
    let (t, _) = train(tiny(6), &mut OracleProvider).unwrap();
    let ckpt = Checkpoint::from_json(&t.checkpoint().to_json().unwrap()).unwrap();
    let mut fresh = Trainer::new(tiny(6)).unwrap();
    fresh.load_checkpoint(&ckpt).unwrap();
    assert_eq!(fresh.checkpoint(), t.checkpoint());
    let a = eval::evaluate_refgame(&t.speaker, &t.listener, t.eval_states()).unwrap();
    let b = eval::evaluate_refgame(&fresh.speaker, &fresh.listener, fresh.eval_states()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn navigation_round_runs() {
    let cfg = TrainConfig {
        env: EnvKind::Nav,
        rounds: 3,
        eval_period: 3,
        nav_eval_episodes: 2,
        t_max: 10,
        ..tiny(7)
    };
    let (t, rows) = train(cfg, &mut OracleProvider).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(t.nav_eval_outcomes().len(), 2);
    assert!(t.env_steps() > 0 && t.env_steps() <= 30);
}

#[test]
fn metrics_csv_has_seven_columns() {
    let row = MetricsRow {
        round: 3,
        success_rate: 0.5,
        bleu: 0.25,
        mean_entropy: 1.0,
        mean_mi: 0.1,
        annotations_used: 2,
        ret: 0.5,
    };
    assert_eq!(row.to_csv().split(',').count(), 7);
    assert_eq!(MetricsRow::CSV_HEADER.split(',').count(), 7);
}
